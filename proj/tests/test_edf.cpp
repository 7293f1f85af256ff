#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "neurocam/edf.hpp"
#include "neurocam/tensor.hpp"

using namespace neurocam;

namespace {

Recording make_recording(std::size_t channels, std::size_t samples, double fs, RngState& rng,
                         double amplitude = 100.0) {
  Recording rec;
  rec.subject_id = 42;
  rec.run_id = 3;
  rec.sampling_rate = fs;
  rec.n_channels = channels;
  rec.n_samples = samples;
  for (std::size_t c = 0; c < channels; ++c) rec.channel_labels.push_back("Ch" + std::to_string(c));
  rec.samples.resize(channels * samples);
  for (auto& v : rec.samples) v = rng.uniform(-amplitude, amplitude);
  return rec;
}

}  // namespace

TEST_CASE("serialize/parse round trip, 2 signals x 1 record x 160 samples") {
  RngState rng{1, 0};
  Recording rec = make_recording(2, 160, 160.0, rng);
  auto bytes = serialize_edf(rec);
  Recording back = parse_edf(bytes);
  CHECK(back.n_channels == 2);
  CHECK(back.n_samples == 160);
  CHECK(back.sampling_rate == doctest::Approx(160.0));
  CHECK(back.subject_id == 42);
  CHECK(back.run_id == 3);
  CHECK(back.channel_labels == rec.channel_labels);
}

TEST_CASE("zero-signal recording serializes to the 256-byte fixed header") {
  Recording rec;
  rec.sampling_rate = 160.0;
  auto bytes = serialize_edf(rec);
  CHECK(bytes.size() == 256);
  Recording back = parse_edf(bytes);
  CHECK(back.n_channels == 0);
  CHECK(back.annotations.empty());
}

TEST_CASE("round-trip error bounded by one quantization step") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngState rng{seed + 7, 0};
    const std::size_t channels = 1 + seed % 4;
    Recording rec = make_recording(channels, 320, 160.0, rng, 50.0 + 10.0 * seed);
    auto bytes = serialize_edf(rec);
    Recording back = parse_edf(bytes);
    REQUIRE(back.n_channels == rec.n_channels);
    REQUIRE(back.n_samples == rec.n_samples);
    for (std::size_t c = 0; c < channels; ++c) {
      double lo = rec.sample(c, 0), hi = lo;
      for (std::size_t t = 0; t < rec.n_samples; ++t) {
        lo = std::min(lo, rec.sample(c, t));
        hi = std::max(hi, rec.sample(c, t));
      }
      const double step = (hi - lo) / 65535.0;
      for (std::size_t t = 0; t < rec.n_samples; ++t)
        CHECK(std::abs(back.sample(c, t) - rec.sample(c, t)) <= step * 1.000001);
    }
  }
}

TEST_CASE("channel label longer than 16 bytes is rejected") {
  RngState rng{2, 0};
  Recording rec = make_recording(1, 16, 16.0, rng);
  rec.channel_labels[0] = "ABCDEFGHIJKLMNOPQ";  // 17 chars
  CHECK_THROWS(serialize_edf(rec));
}

TEST_CASE("annotations survive the round trip and drive extract_trials") {
  RngState rng{3, 0};
  Recording rec = make_recording(2, 160 * 13, 160.0, rng);
  rec.annotations = {{0.0, 4.1, "T0"}, {4.1, 4.1, "T1"}, {8.2, 4.1, "T2"}};
  auto bytes = serialize_edf(rec);
  Recording back = parse_edf(bytes);
  REQUIRE(back.annotations.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.annotations[i].label == rec.annotations[i].label);
    CHECK(back.annotations[i].onset_s == doctest::Approx(rec.annotations[i].onset_s).epsilon(1e-9));
    CHECK(back.annotations[i].duration_s ==
          doctest::Approx(rec.annotations[i].duration_s).epsilon(1e-9));
  }
  auto trials = extract_trials(back);
  REQUIRE(trials.size() == 2);
  CHECK(trials[0].label == ClassLabel::Left);
  CHECK(trials[1].label == ClassLabel::Right);
  CHECK(trials[0].onset_sample == std::llround(4.1 * 160));
  CHECK(trials[0].length_samples == std::llround(4.1 * 160));
}

TEST_CASE("extract_trials skips rest and truncates overruns") {
  RngState rng{4, 0};
  Recording rec = make_recording(1, 800, 160.0, rng);
  SUBCASE("only rest annotations") {
    rec.annotations = {{0.0, 2.0, "T0"}, {2.0, 2.0, "T0"}};
    CHECK(extract_trials(rec).empty());
  }
  SUBCASE("trial extends past end of data") {
    rec.annotations = {{4.0, 5.0, "T1"}};  // 4s + 5s > 5s of data
    auto trials = extract_trials(rec);
    REQUIRE(trials.size() == 1);
    CHECK(trials[0].truncated);
    CHECK(trials[0].onset_sample + trials[0].length_samples == rec.n_samples);
  }
  SUBCASE("unknown labels ignored") {
    rec.annotations = {{0.0, 1.0, "T7"}, {1.0, 1.0, "T1"}};
    CHECK(extract_trials(rec).size() == 1);
  }
  SUBCASE("trial count equals T1/T2 count across random annotation sets") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      RngState r{seed, 0};
      rec.annotations.clear();
      std::size_t expected = 0;
      double t = 0;
      while (t < 4.0) {
        const char* names[3] = {"T0", "T1", "T2"};
        const int pickv = static_cast<int>(r.next_u64() % 3);
        const double dur = 0.25 + r.uniform() * 0.5;
        rec.annotations.push_back({t, dur, names[pickv]});
        if (pickv != 0) ++expected;
        t += dur;
      }
      CHECK(extract_trials(rec).size() == expected);
    }
  }
}

TEST_CASE("validate_recording") {
  RngState rng{5, 0};
  SUBCASE("conformant 64-channel 160 Hz recording") {
    Recording rec = make_recording(64, 320, 160.0, rng);
    rec.annotations = {{0.0, 1.0, "T1"}};
    CHECK(validate_recording(rec).ok());
  }
  SUBCASE("128 Hz sampling rate flagged") {
    Recording rec = make_recording(64, 320, 128.0, rng);
    rec.annotations = {{0.0, 1.0, "T1"}};
    auto report = validate_recording(rec);
    REQUIRE(report.issues.size() == 1);
    CHECK(report.issues[0].code == "sampling_rate");
  }
  SUBCASE("NaN sample flagged with channel index") {
    Recording rec = make_recording(64, 320, 160.0, rng);
    rec.annotations = {{0.0, 1.0, "T1"}};
    rec.samples[7 * 320 + 5] = std::nan("");
    auto report = validate_recording(rec);
    REQUIRE(report.issues.size() == 1);
    CHECK(report.issues[0].code == "nan_sample");
    CHECK(report.issues[0].detail.find("channel 7") != std::string::npos);
  }
  SUBCASE("missing annotations flagged") {
    Recording rec = make_recording(64, 320, 160.0, rng);
    auto report = validate_recording(rec);
    REQUIRE(report.issues.size() == 1);
    CHECK(report.issues[0].code == "no_annotations");
  }
}

TEST_CASE("malformed input raises structured errors, never crashes") {
  RngState rng{6, 0};
  Recording rec = make_recording(2, 160, 160.0, rng);
  rec.annotations = {{0.0, 0.5, "T1"}};
  auto bytes = serialize_edf(rec);

  SUBCASE("truncations") {
    for (std::size_t cut : {std::size_t(0), std::size_t(100), std::size_t(255), std::size_t(300),
                            bytes.size() - 1}) {
      std::vector<std::uint8_t> moth(bytes.begin(), bytes.begin() + cut);
      CHECK_THROWS_AS(parse_edf(moth), std::runtime_error);
    }
  }
  SUBCASE("bad version field") {
    auto moth = bytes;
    moth[0] = 'X';
    CHECK_THROWS_AS(parse_edf(moth), std::runtime_error);
  }
  SUBCASE("non-numeric header field") {
    auto moth = bytes;
    moth[236] = 'q';  // record count
    CHECK_THROWS_AS(parse_edf(moth), std::runtime_error);
  }
  SUBCASE("declared size mismatch") {
    auto moth = bytes;
    moth.resize(moth.size() - 2);
    CHECK_THROWS_AS(parse_edf(moth), std::runtime_error);
  }
}

TEST_CASE("annotations-only container with zero data records") {
  // hand-crafted: one EDF Annotations signal, no ordinary signals, no records
  std::vector<std::uint8_t> bytes;
  auto put = [&](const std::string& s, std::size_t len) {
    for (std::size_t i = 0; i < len; ++i)
      bytes.push_back(i < s.size() ? static_cast<std::uint8_t>(s[i]) : ' ');
  };
  put("0", 8);
  put("", 80);
  put("", 80);
  put("01.01.00", 8);
  put("00.00.00", 8);
  put("512", 8);
  put("EDF+C", 44);
  put("0", 8);
  put("1", 8);
  put("1", 4);
  put("EDF Annotations", 16);
  put("", 80);
  put("", 8);
  put("-1", 8);
  put("1", 8);
  put("-32768", 8);
  put("32767", 8);
  put("", 80);
  put("8", 8);
  put("", 32);
  REQUIRE(bytes.size() == 512);
  Recording rec = parse_edf(bytes);
  CHECK(rec.n_channels == 0);
  CHECK(rec.n_samples == 0);
  CHECK(rec.annotations.empty());
}
