#include <doctest.h>

#include <cstring>
#include <sstream>

#include "patchlm/checkpoint.hpp"
#include "support/fixtures.hpp"

using namespace patchlm;

namespace {

Checkpoint sample_checkpoint(bool with_aux) {
  auto c = fixtures::tiny_config(2);
  auto p = init_params<float>(c, 4);
  PatchConfig patch;
  patch.patch_size = 2;
  patch.lambda = 0.5;
  patch.context_tokens = 16;
  patch.input_proj = patch.output_proj = with_aux;
  return make_checkpoint(p, init_aux<float>(c, patch, 5), patch);
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("write-read-write is byte exact") {
    const auto ckpt = sample_checkpoint(true);
    const std::string a = checkpoint_bytes(ckpt);
    std::istringstream in(a);
    const auto back = read_checkpoint(in);
    CHECK(back.model == ckpt.model);
    CHECK(back.patch == ckpt.patch);
    CHECK(back.tensors == ckpt.tensors);
    CHECK(checkpoint_bytes(back) == a);
  }

  TEST_CASE("header layout") {
    const std::string bytes = checkpoint_bytes(sample_checkpoint(false));
    CHECK(bytes.substr(0, 4) == "PLMC");
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    CHECK(version == kCheckpointVersion);
  }

  TEST_CASE("load_params restores the backbone exactly and ignores aux") {
    const auto ckpt = sample_checkpoint(true);
    CHECK(ckpt.has_aux());
    auto p = load_params<float>(ckpt);
    CHECK(p.allocated_elements() == param_count(ckpt.model));
    for (const auto& [name, t] : p.named()) {
      const auto* rec = ckpt.find(name);
      REQUIRE(rec);
      CHECK(rec->shape == t->shape());
      CHECK(std::equal(rec->data.begin(), rec->data.end(), t->data().begin()));
    }
    auto aux = load_aux<float>(ckpt);
    CHECK(aux.w_in);
    CHECK(aux.w_out);
  }

  TEST_CASE("strip_aux removes every aux tensor and clears the flags") {
    const auto stripped = strip_aux(sample_checkpoint(true));
    CHECK_FALSE(stripped.has_aux());
    CHECK_FALSE(stripped.patch.input_proj);
    CHECK_FALSE(stripped.patch.output_proj);
    CHECK(checkpoint_bytes(strip_aux(sample_checkpoint(false))) == checkpoint_bytes(sample_checkpoint(false)));
  }

  TEST_CASE("corrupt input is rejected") {
    std::istringstream bad_magic(std::string("NOPE") + std::string(64, '\0'));
    CHECK_THROWS_AS(read_checkpoint(bad_magic), FormatError);
    std::string bytes = checkpoint_bytes(sample_checkpoint(false));
    std::istringstream truncated(bytes.substr(0, bytes.size() - 7));
    CHECK_THROWS_AS(read_checkpoint(truncated), FormatError);
  }

  TEST_CASE("missing or misshaped tensors fail to load") {
    auto ckpt = sample_checkpoint(false);
    ckpt.tensors.pop_back();
    CHECK_THROWS(load_params<float>(ckpt));
    auto ckpt2 = sample_checkpoint(false);
    ckpt2.tensors[0].shape = {ckpt2.tensors[0].data.size()};
    CHECK_THROWS(load_params<float>(ckpt2));
  }
}
