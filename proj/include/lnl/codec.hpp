#pragma once
// Predictive near-lossless codec: MED prediction over the reconstructed
// plane, tau-bounded uniform residual quantization and context-adaptive
// Golomb-Rice coding. Decoding reproduces the encoder-side reconstruction
// bit-exactly, and every pixel satisfies |x - y| <= tau.

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>

#include "lnl/bitio.hpp"
#include "lnl/image.hpp"

namespace lnl {

constexpr int kMaxTau = 8;

// North / west / northwest neighbors from the reconstructed plane, with
// border substitutions already applied (see gather_neighbors).
struct CausalContext {
  uint8_t n = 0;
  uint8_t w = 0;
  uint8_t nw = 0;
};

struct ResidualCode {
  int e = 0;      // prediction residual, [-255, 255]
  int q = 0;      // quantization index
  int e_hat = 0;  // dequantized residual, q * (2*tau + 1)
};

// Stream header + entropy-coded payload. On disk: "LNLC", version byte,
// width/height as u32 little-endian, tau byte, then payload bytes
// (MSB-first bits, zero-padded to a byte boundary).
struct CodeStream {
  uint32_t width = 0;
  uint32_t height = 0;
  uint8_t tau = 0;
  std::vector<uint8_t> payload;

  size_t total_bytes() const { return 14 + payload.size(); }
  bool operator==(const CodeStream&) const = default;
};

// Per-context Golomb parameter adaptation state. Encoder and decoder run
// this in lockstep; after every symbol both sides hold identical values.
struct CoderState {
  std::array<uint32_t, 8> A;  // sum of index magnitudes
  std::array<uint32_t, 8> N;  // symbol counts

  CoderState() {
    A.fill(4);
    N.fill(1);
  }
  bool operator==(const CoderState&) const = default;
};

// Median edge detector. Picks min/max of n,w next to an edge, planar
// extrapolation n + w - nw otherwise.
uint8_t predict_med(const CausalContext& ctx);

// q = sign(e) * floor((|e| + tau) / (2*tau + 1)); e_hat = q * (2*tau + 1).
// Guarantees |e - e_hat| <= tau for all e in [-255, 255], tau in [0, 8].
ResidualCode quantize_residual(int e, int tau);

// Activity bucket from delta = |n - w| + |n - ne|; thresholds
// 0,1,2,4,8,16,32 give ids 0..7.
int context_id(const CausalContext& ctx, uint8_t ne);

// Zigzag: q >= 0 -> 2q, q < 0 -> -2q - 1.
uint32_t map_signed(int q);
int unmap_signed(uint32_t u);

// Unary quotient (u >> k) + k remainder bits; quotients >= 24 escape to a
// raw 16-bit value. u must fit 16 bits on the escape path.
void golomb_rice_encode(BitWriter& writer, uint32_t u, int k);
uint32_t golomb_rice_decode(BitReader& reader, int k);

// Smallest k >= 0 with N * 2^k >= A, capped at 16.
int choose_k(uint32_t A, uint32_t N);

// A[c] += |q| (kept >= 1), N[c] += 1; both halved (rounding up) once N
// reaches 64.
void update_state(CoderState& state, int ctx, int q);

// Full raster-scan encode. Returns the stream and the reconstruction the
// decoder will reproduce bit-exactly.
std::pair<CodeStream, GrayImage> encode_image(const GrayImage& img, int tau);

GrayImage decode_image(const CodeStream& stream);

// 8 * total stream bytes (header included) / pixel count.
double bits_per_pixel(const CodeStream& stream, const GrayImage& img);

void write_stream(const CodeStream& stream, const std::filesystem::path& path);
CodeStream read_stream(const std::filesystem::path& path);
std::vector<uint8_t> serialize_stream(const CodeStream& stream);
CodeStream parse_stream(const std::vector<uint8_t>& bytes);

}  // namespace lnl
