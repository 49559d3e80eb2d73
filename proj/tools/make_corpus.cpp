// Writes the deterministic synthetic byte corpus used for desk-scale runs.

#include <cstdio>
#include <fstream>
#include <string>

#include <CLI11.hpp>

#include "patchlm/data.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic English-like byte corpus"};
  std::string out;
  std::size_t bytes = 5'000'000;
  std::uint64_t seed = 7;
  app.add_option("--out", out, "Output file")->required();
  app.add_option("--bytes", bytes, "Corpus size in bytes");
  app.add_option("--seed", seed, "Generator seed");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string text = patchlm::synthetic_text(bytes, seed);
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f.write(text.data(), std::streamsize(text.size()))) {
    std::fprintf(stderr, "error: cannot write %s\n", out.c_str());
    return 1;
  }
  return 0;
}
