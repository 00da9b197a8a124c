#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mdg/errors.hpp"
#include "mdg/noisefield.hpp"

using namespace mdg;
using namespace mdg::noise;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("alpha schedule") {
  const AlphaSchedule s;
  CHECK(s.alpha(0) == 1.0);
  CHECK(s.alpha(1) == doctest::Approx(0.99));
  CHECK(s.alpha(2) == doctest::Approx(0.745));
  CHECK(s.alpha(3) == doctest::Approx(0.50));
  CHECK(s.alpha(4) == doctest::Approx(0.255));
  CHECK(s.alpha(5) == 0.01);
  CHECK(s.alpha(kGuidance) == 0.8);
  for (Level l = 1; l <= 5; ++l) CHECK(s.alpha(l) < s.alpha(l - 1));
  CHECK(s.alpha(kGuidance) < s.alpha(1));
  CHECK(s.alpha(kGuidance) > s.alpha(2));
  CHECK_THROWS_AS(s.alpha(6), ContractViolation);
  CHECK(AlphaSchedule(1).alpha(1) == 0.01);
}

TEST_CASE("apply_noise") {
  const AlphaSchedule s;
  Rng rng(1);
  const Tensor x({2, 3, 2}, {1, -2, 3, 0.5, -0.0, 7, 1, 1, 2, 2, 3, 3});
  const auto clean = apply_noise(x, NoiseMask::filled(2, 3, 0), s, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(std::signbit(clean.z.data()[i]) == std::signbit(x.data()[i]));
    CHECK(clean.z.data()[i] == x.data()[i]);
  }
  const Tensor one({1, 1, 1}, {1.0});
  const Tensor z = mix_noise(one, Tensor::zeros({1, 1, 1}), NoiseMask::filled(1, 1, 5), s);
  CHECK(z.item() == doctest::Approx(0.1));
  CHECK_THROWS_AS(apply_noise(Tensor({1, 1, 1}, {NAN}), NoiseMask::filled(1, 1, 1), s, rng),
                  ContractViolation);
  CHECK_THROWS_AS(apply_noise(x, NoiseMask::filled(2, 2, 1), s, rng), ContractViolation);
}

TEST_CASE("apply_noise moments at level 3") {
  const AlphaSchedule s;
  Rng rng(7);
  const std::size_t n = 100000;
  const Tensor x = Tensor::full({1, n, 1}, 2.0);
  const auto z = apply_noise(x, NoiseMask::filled(1, n, 3), s, rng).z;
  double mean = 0, sq = 0;
  for (double v : z.data()) mean += v;
  mean /= n;
  for (double v : z.data()) sq += (v - mean) * (v - mean);
  const double var = sq / (n - 1);
  CHECK(std::abs(mean - std::sqrt(0.5) * 2.0) < 0.01);
  CHECK(std::abs(var - 0.5) < 0.01);
}

TEST_CASE("renoise") {
  const AlphaSchedule s;
  Rng rng(3);
  const Tensor x({1, 2, 1}, {0.3, -0.7});
  const Tensor same = renoise(x, NoiseMask::filled(1, 2, 0), s, rng);
  CHECK(same.data()[0] == 0.3);
  CHECK(same.data()[1] == -0.7);

  NoiseMask mixed = NoiseMask::filled(1, 2, 0);
  mixed.set(0, 1, 5);
  const Tensor eps({1, 2, 1}, {1.0, 1.0});
  const Tensor m = mix_noise(x, eps, mixed, s);
  CHECK(m.data()[0] == 0.3);
  CHECK(m.data()[1] == doctest::Approx(0.1 * -0.7 + std::sqrt(0.99)));

  Rng a(11), b(11);
  const Tensor big = Tensor::full({1, 50, 2}, 1.5);
  const Tensor r1 = renoise(big, NoiseMask::filled(1, 50, 5), s, a);
  const Tensor r2 = apply_noise(big, NoiseMask::filled(1, 50, 5), s, b).z;
  for (std::size_t i = 0; i < r1.numel(); ++i) CHECK(r1.data()[i] == r2.data()[i]);
}

TEST_CASE("training masks") {
  Rng rng(5);
  const NoiseMask full = sample_training_mask(3, 8, 1.0, MaskAxis::temporal, 5, rng);
  for (Level l : full.levels) CHECK(l == 5);

  const NoiseMask ag = sample_training_mask(3, 6, 0.0, MaskAxis::agent, 5, rng);
  for (std::size_t a = 0; a < 3; ++a) {
    CHECK(ag.at(a, 0) >= 1);
    CHECK(ag.at(a, 0) <= 4);
    for (std::size_t t = 0; t < 6; ++t) CHECK(ag.at(a, t) == ag.at(a, 0));
  }

  bool monotone = true, tail = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const NoiseMask m = sample_training_mask(4, 8, 0.5, MaskAxis::temporal, 5, rng);
    for (std::size_t a = 0; a < 4; ++a) {
      for (std::size_t t = 4; t < 8; ++t) tail = tail && m.at(a, t) == 5;
      for (std::size_t t = 1; t < 8; ++t) monotone = monotone && m.at(a, t) >= m.at(a, t - 1);
      for (std::size_t t = 0; t < 4; ++t) monotone = monotone && m.at(a, t) >= 1;
    }
  }
  CHECK(monotone);
  CHECK(tail);

  const NoiseMask half = sample_training_mask(10, 4, 0.25, MaskAxis::agent, 5, rng);
  int full_rows = 0;
  for (std::size_t a = 0; a < 10; ++a) full_rows += half.at(a, 0) == 5;
  CHECK(full_rows == 3);

  const NoiseMask bin = sample_training_mask(2, 10, 0.0, MaskAxis::temporal, 1, rng);
  for (Level l : bin.levels) CHECK(l <= 1);
  const NoiseMask bin_agent = sample_training_mask(4, 3, 0.5, MaskAxis::agent, 1, rng);
  int ones = 0;
  for (Level l : bin_agent.levels) ones += l;
  CHECK(ones == 6);

  const NoiseMask rnd = sample_random_mask(3, 30, 5, rng);
  for (Level l : rnd.levels) CHECK((l >= 1 && l <= 5));
}

TEST_CASE("batch mask rates") {
  CHECK(batch_mask_rates(5) == std::vector<double>{0, 0.25, 0.5, 0.75, 1.0});
  CHECK(batch_mask_rates(1) == std::vector<double>{0.5});
  CHECK(batch_mask_rates(2) == std::vector<double>{0, 1});
}

TEST_CASE("built schedules") {
  const AlphaSchedule a;
  const auto one = build_schedule(ScheduleMode::one_step, 1, 3, 7, 5);
  REQUIRE(one.masks.size() == 2);
  CHECK(one.masks[0] == NoiseMask::filled(3, 7, 5));
  CHECK(one.masks[1] == NoiseMask::filled(3, 7, 0));

  const auto tmp = build_schedule(ScheduleMode::temporal, 5, 2, 40, 5);
  REQUIRE(tmp.masks.size() == 6);
  for (std::size_t i = 0; i < tmp.masks.size(); ++i) {
    const std::size_t ell = 5 - i;
    const std::size_t zeros = (5 - ell) * 8;
    for (std::size_t t = 0; t < 40; ++t) {
      if (t < zeros) CHECK(tmp.masks[i].at(1, t) == 0);
      else CHECK(tmp.masks[i].at(1, t) > 0);
    }
  }
  CHECK(schedule_is_valid(tmp, a));

  const auto ag = build_schedule(ScheduleMode::agent, 5, 10, 4, 5);
  REQUIRE(ag.masks.size() == 6);
  for (std::size_t i = 1; i < 5; ++i) {
    for (std::size_t agent = 0; agent < 10; ++agent) {
      CHECK((ag.masks[i].at(agent, 0) == 0) == (agent < 2 * i));
    }
  }
  CHECK(ag.masks.back() == NoiseMask::filled(10, 4, 0));
  CHECK(schedule_is_valid(ag, a));
  CHECK_THROWS_AS(build_schedule(ScheduleMode::temporal, 0, 2, 4, 5), ContractViolation);
}

TEST_CASE("schedule dumps match golden files") {
  struct Case {
    ScheduleMode mode;
    std::size_t steps, agents, timesteps;
  };
  const Case cases[] = {{ScheduleMode::one_step, 1, 3, 20}, {ScheduleMode::temporal, 2, 2, 20},
                        {ScheduleMode::temporal, 5, 2, 40}, {ScheduleMode::temporal, 5, 2, 20},
                        {ScheduleMode::temporal, 10, 2, 20}, {ScheduleMode::temporal, 20, 2, 20},
                        {ScheduleMode::agent, 2, 10, 4},    {ScheduleMode::agent, 5, 10, 4},
                        {ScheduleMode::agent, 10, 10, 4}};
  for (const Case& c : cases) {
    const std::string name = std::string(MDG_GOLDEN_DIR) + "/schedule_" + to_string(c.mode) + "_L" +
                             std::to_string(c.steps) + "_N" + std::to_string(c.agents) + "_T" +
                             std::to_string(c.timesteps) + ".txt";
    const std::string golden = read_text(name);
    REQUIRE_MESSAGE(!golden.empty(), name);
    CHECK(dump_schedule(build_schedule(c.mode, c.steps, c.agents, c.timesteps, 5)) == golden);
  }
}

TEST_CASE("guidance composition") {
  const AlphaSchedule s;
  const NoiseMask m = build_schedule(ScheduleMode::temporal, 5, 3, 10, 5).masks[2];
  CHECK(compose_guidance(m, NoiseMask::filled(3, 10, 0), s) == m);

  NoiseMask zero = NoiseMask::filled(1, 1, 0), full = NoiseMask::filled(1, 1, 5);
  const NoiseMask g = NoiseMask::filled(1, 1, kGuidance);
  CHECK(compose_guidance(zero, g, s).levels[0] == kGuidance);
  CHECK(compose_guidance(full, g, s).levels[0] == 5);

  const NoiseMask gm = guidance_mask(3, 10, {1});
  const NoiseMask c = compose_guidance(m, gm, s);
  for (std::size_t t = 0; t < 10; ++t) {
    CHECK(c.at(0, t) == m.at(0, t));
    CHECK(c.at(2, t) == m.at(2, t));
    CHECK(s.alpha(c.at(1, t)) <= 0.8);
  }
}
