#include "lnl/codec.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <string>

namespace lnl {

namespace {

struct Neighbors {
  uint8_t n, w, nw, ne;
};

// Causal neighborhood from the reconstructed plane. Substitutions collapse
// the borders onto the interior rules: row 0 copies west into n/nw/ne,
// column 0 copies north into w/nw, the first pixel sees 128 everywhere,
// and ne on the right edge falls back to n.
Neighbors gather_neighbors(const GrayImage& recon, int r, int c) {
  Neighbors nb{};
  nb.w = c > 0 ? recon.at(r, c - 1) : (r > 0 ? recon.at(r - 1, c) : 128);
  nb.n = r > 0 ? recon.at(r - 1, c) : nb.w;
  nb.nw = (r > 0 && c > 0) ? recon.at(r - 1, c - 1) : (r > 0 ? nb.n : nb.w);
  nb.ne = (r > 0 && c + 1 < recon.width) ? recon.at(r - 1, c + 1) : nb.n;
  return nb;
}

uint8_t clamp_pixel(int v) {
  return static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
}

void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 24));
}

uint32_t get_u32le(const std::vector<uint8_t>& in, size_t pos) {
  return static_cast<uint32_t>(in[pos]) |
         (static_cast<uint32_t>(in[pos + 1]) << 8) |
         (static_cast<uint32_t>(in[pos + 2]) << 16) |
         (static_cast<uint32_t>(in[pos + 3]) << 24);
}

constexpr int kEscapeQuotient = 24;
constexpr int kEscapeBits = 16;
constexpr uint32_t kHalveAt = 64;

}  // namespace

uint8_t predict_med(const CausalContext& ctx) {
  const int n = ctx.n, w = ctx.w, nw = ctx.nw;
  const int lo = std::min(n, w), hi = std::max(n, w);
  if (nw >= hi) return static_cast<uint8_t>(lo);
  if (nw <= lo) return static_cast<uint8_t>(hi);
  return clamp_pixel(n + w - nw);
}

ResidualCode quantize_residual(int e, int tau) {
  const int step = 2 * tau + 1;
  const int sign = e < 0 ? -1 : 1;
  ResidualCode rc;
  rc.e = e;
  rc.q = sign * ((std::abs(e) + tau) / step);
  rc.e_hat = rc.q * step;
  return rc;
}

int context_id(const CausalContext& ctx, uint8_t ne) {
  const int delta = std::abs(int(ctx.n) - int(ctx.w)) +
                    std::abs(int(ctx.n) - int(ne));
  if (delta == 0) return 0;
  if (delta == 1) return 1;
  if (delta == 2) return 2;
  if (delta <= 4) return 3;
  if (delta <= 8) return 4;
  if (delta <= 16) return 5;
  if (delta <= 32) return 6;
  return 7;
}

uint32_t map_signed(int q) {
  return q >= 0 ? static_cast<uint32_t>(2 * q)
                : static_cast<uint32_t>(-2 * q - 1);
}

int unmap_signed(uint32_t u) {
  return (u & 1u) ? -static_cast<int>((u + 1) / 2) : static_cast<int>(u / 2);
}

void golomb_rice_encode(BitWriter& writer, uint32_t u, int k) {
  const uint32_t quotient = u >> k;
  if (quotient < kEscapeQuotient) {
    for (uint32_t i = 0; i < quotient; ++i) writer.put_bit(1);
    writer.put_bit(0);
    writer.put_bits(u, k);
  } else {
    if (u >= (1u << kEscapeBits))
      throw std::logic_error("golomb_rice_encode: escape value " +
                             std::to_string(u) + " exceeds 16 bits");
    for (int i = 0; i < kEscapeQuotient; ++i) writer.put_bit(1);
    writer.put_bit(0);
    writer.put_bits(u, kEscapeBits);
  }
}

uint32_t golomb_rice_decode(BitReader& reader, int k) {
  uint32_t ones = 0;
  while (reader.get_bit()) {
    if (++ones > kEscapeQuotient)
      throw StreamError("corrupt stream: unary run exceeds escape length");
  }
  if (ones == kEscapeQuotient) return reader.get_bits(kEscapeBits);
  return (ones << k) | reader.get_bits(k);
}

int choose_k(uint32_t A, uint32_t N) {
  int k = 0;
  while (k < 16 && (static_cast<uint64_t>(N) << k) < A) ++k;
  return k;
}

void update_state(CoderState& state, int ctx, int q) {
  state.A[ctx] += static_cast<uint32_t>(std::abs(q));
  state.A[ctx] = std::max<uint32_t>(state.A[ctx], 1);
  state.N[ctx] += 1;
  if (state.N[ctx] >= kHalveAt) {
    state.A[ctx] = (state.A[ctx] + 1) / 2;
    state.N[ctx] = (state.N[ctx] + 1) / 2;
  }
}

std::pair<CodeStream, GrayImage> encode_image(const GrayImage& img, int tau) {
  if (tau < 0 || tau > kMaxTau)
    throw Error("encode_image: tau " + std::to_string(tau) +
                " outside [0, 8]");
  GrayImage recon(img.width, img.height);
  CoderState state;
  BitWriter writer;

  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const Neighbors nb = gather_neighbors(recon, r, c);
      const CausalContext ctx{nb.n, nb.w, nb.nw};
      const int pred = predict_med(ctx);
      const int cid = context_id(ctx, nb.ne);
      const ResidualCode rc = quantize_residual(img.at(r, c) - pred, tau);
      const int k = choose_k(state.A[cid], state.N[cid]);
      golomb_rice_encode(writer, map_signed(rc.q), k);
      update_state(state, cid, rc.q);
      recon.at(r, c) = clamp_pixel(pred + rc.e_hat);
    }
  }

  CodeStream stream;
  stream.width = static_cast<uint32_t>(img.width);
  stream.height = static_cast<uint32_t>(img.height);
  stream.tau = static_cast<uint8_t>(tau);
  stream.payload = writer.finish();
  return {std::move(stream), std::move(recon)};
}

GrayImage decode_image(const CodeStream& stream) {
  if (stream.width < 1 || stream.height < 1)
    throw ParseError("decode_image: non-positive dimensions");
  if (stream.tau > kMaxTau)
    throw ParseError("decode_image: tau out of range");
  const int step = 2 * stream.tau + 1;
  GrayImage recon(static_cast<int>(stream.width),
                  static_cast<int>(stream.height));
  CoderState state;
  BitReader reader(stream.payload);

  for (int r = 0; r < recon.height; ++r) {
    for (int c = 0; c < recon.width; ++c) {
      const Neighbors nb = gather_neighbors(recon, r, c);
      const CausalContext ctx{nb.n, nb.w, nb.nw};
      const int pred = predict_med(ctx);
      const int cid = context_id(ctx, nb.ne);
      const int k = choose_k(state.A[cid], state.N[cid]);
      const int q = unmap_signed(golomb_rice_decode(reader, k));
      update_state(state, cid, q);
      recon.at(r, c) = clamp_pixel(pred + q * step);
    }
  }
  reader.expect_only_padding();
  return recon;
}

double bits_per_pixel(const CodeStream& stream, const GrayImage& img) {
  if (static_cast<int>(stream.width) != img.width ||
      static_cast<int>(stream.height) != img.height)
    throw ShapeError("bits_per_pixel: stream/image dimensions differ");
  return 8.0 * static_cast<double>(stream.total_bytes()) /
         (static_cast<double>(img.width) * img.height);
}

std::vector<uint8_t> serialize_stream(const CodeStream& stream) {
  std::vector<uint8_t> out = {'L', 'N', 'L', 'C', 1};
  put_u32le(out, stream.width);
  put_u32le(out, stream.height);
  out.push_back(stream.tau);
  out.insert(out.end(), stream.payload.begin(), stream.payload.end());
  return out;
}

CodeStream parse_stream(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 14) throw ParseError("lnl stream: truncated header");
  if (bytes[0] != 'L' || bytes[1] != 'N' || bytes[2] != 'L' ||
      bytes[3] != 'C')
    throw ParseError("lnl stream: bad magic");
  if (bytes[4] != 1)
    throw ParseError("lnl stream: unsupported version " +
                     std::to_string(bytes[4]));
  CodeStream stream;
  stream.width = get_u32le(bytes, 5);
  stream.height = get_u32le(bytes, 9);
  stream.tau = bytes[13];
  if (stream.width < 1 || stream.height < 1)
    throw ParseError("lnl stream: non-positive dimensions");
  if (stream.tau > kMaxTau)
    throw ParseError("lnl stream: tau " + std::to_string(stream.tau) +
                     " out of range");
  stream.payload.assign(bytes.begin() + 14, bytes.end());
  return stream;
}

void write_stream(const CodeStream& stream,
                  const std::filesystem::path& path) {
  const auto bytes = serialize_stream(stream);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

CodeStream read_stream(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return parse_stream(bytes);
}

}  // namespace lnl
