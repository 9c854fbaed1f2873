// Acceptance suite placeholder; filled in after corpus calibration.
#include <cstdio>
int main() {
  std::printf("acceptance: not yet implemented\n");
  return 1;
}
