#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "neurocam/channels.hpp"
#include "neurocam/tensor.hpp"

using namespace neurocam;

namespace {

MontageLayout bundled_montage() {
  return load_montage_csv(std::string(NEUROCAM_DATA_DIR) + "/montage_64.csv");
}

ChannelRanking ranking_from(const std::vector<std::string>& order, double top_score = 100.0) {
  ChannelRanking r;
  r.order = order;
  for (std::size_t i = 0; i < order.size(); ++i)
    r.scores[order[i]] = top_score - static_cast<double>(i);
  return r;
}

}  // namespace

TEST_CASE("bundled montage is a valid 64-channel unit-sphere layout") {
  MontageLayout m = bundled_montage();
  REQUIRE(m.labels.size() == 64);
  for (const auto& label : m.labels) {
    const auto& p = m.positions.at(label);
    CHECK(std::abs(p[0] * p[0] + p[1] * p[1] + p[2] * p[2] - 1.0) < 1e-5);
    auto xy = m.project(label);
    CHECK(xy[0] * xy[0] + xy[1] * xy[1] <= 1.0 + 1e-9);
  }
  // geometry sanity: left-hemisphere channels project to x<0, frontal to y>0
  CHECK(m.project("C3")[0] < 0);
  CHECK(m.project("C4")[0] > 0);
  CHECK(m.project("Fpz")[1] > 0);
  CHECK(m.project("Oz")[1] < 0);
  CHECK(std::abs(m.project("Cz")[0]) < 1e-9);
  CHECK(std::abs(m.project("Cz")[1]) < 1e-9);
}

TEST_CASE("dataset label spellings normalize onto the montage") {
  MontageLayout m = bundled_montage();
  CHECK(m.normalize_label("Fc5.") == "FC5");
  CHECK(m.normalize_label("Cz..") == "Cz");
  CHECK(m.normalize_label("Fcz.") == "FCz");
  CHECK(m.normalize_label("Fp1.") == "Fp1");
  CHECK(m.normalize_label("Af7.") == "AF7");
  CHECK(m.normalize_label("T10.") == "T10");
  CHECK(m.normalize_label("Poz.") == "POz");
  CHECK_THROWS(m.normalize_label("Xx9."));
}

TEST_CASE("top_k_union") {
  std::vector<std::string> base;
  for (int i = 0; i < 30; ++i) base.push_back("ch" + std::to_string(i));

  SUBCASE("identical rankings collapse to k channels") {
    auto l = ranking_from(base);
    auto u = top_k_union(l, l, 10);
    CHECK(u.labels.size() == 10);
    CHECK(u.origin == "gradcam_union");
  }
  SUBCASE("disjoint top-10s give 2k channels") {
    auto l = ranking_from(base);
    std::vector<std::string> reversed(base.rbegin(), base.rend());
    auto r = ranking_from(reversed);
    auto u = top_k_union(l, r, 10);
    CHECK(u.labels.size() == 20);
  }
  SUBCASE("three common channels give 17, ordered by max score") {
    // right ranking shares exactly 3 of the left top-10
    std::vector<std::string> right_order;
    right_order.push_back(base[0]);
    right_order.push_back(base[4]);
    right_order.push_back(base[9]);
    for (int i = 10; i < 17; ++i) right_order.push_back(base[static_cast<std::size_t>(i)]);
    for (const auto& label : base)
      if (std::find(right_order.begin(), right_order.end(), label) == right_order.end())
        right_order.push_back(label);
    auto l = ranking_from(base);
    auto r = ranking_from(right_order);
    auto u = top_k_union(l, r, 10);
    CHECK(u.labels.size() == 17);
    // ch0 has max score 100 in both; first element
    CHECK(u.labels[0] == "ch0");
  }
  SUBCASE("mismatched label sets rejected") {
    auto l = ranking_from(base);
    auto r = ranking_from({"a", "b", "c"});
    CHECK_THROWS(top_k_union(l, r, 2));
  }
  SUBCASE("scale invariance of the ordering") {
    auto l = ranking_from(base);
    auto r = ranking_from(base);
    auto u1 = top_k_union(l, r, 10);
    for (auto& [label, s] : l.scores) s *= 37.0;
    for (auto& [label, s] : r.scores) s *= 37.0;
    auto u2 = top_k_union(l, r, 10);
    CHECK(u1.labels == u2.labels);
  }
}

TEST_CASE("mi_channels returns the fixed 21-label sensorimotor set") {
  MontageLayout m = bundled_montage();
  auto subset = mi_channels(m);
  REQUIRE(subset.labels.size() == 21);
  CHECK(subset.origin == "domain_mi21");
  for (const auto& label : subset.labels) {
    const bool fc = label.rfind("FC", 0) == 0;
    const bool cp = label.rfind("CP", 0) == 0;
    const bool c = !fc && !cp && label[0] == 'C';
    CHECK((fc || cp || c));
    CHECK(m.has(label));
  }
  // removing CPz must produce an error naming it
  MontageLayout broken = m;
  broken.positions.erase("CPz");
  try {
    mi_channels(broken);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("CPz") != std::string::npos);
  }
}

TEST_CASE("subset_epochs restriction and idempotence") {
  RngState rng{12, 0};
  MontageLayout m = bundled_montage();
  EpochSet set = make_epoch_set(m.labels, 160.0, 20);
  for (int e = 0; e < 6; ++e) {
    Epoch ep;
    ep.label = e % 2 ? ClassLabel::Left : ClassLabel::Right;
    ep.provenance = {1, 1, e, 0};
    ep.data.resize(64 * 20);
    for (auto& v : ep.data) v = rng.uniform(-1, 1);
    set.append(ep);
  }

  auto mi = mi_channels(m);
  EpochSet reduced = subset_epochs(set, mi);
  CHECK(reduced.n_channels == 21);
  CHECK(reduced.n_epochs == 6);
  CHECK(reduced.labels == set.labels);
  CHECK(reduced.provenance.size() == set.provenance.size());
  // row content matches the source channel
  const std::size_t c3 = m.index_of("C3");
  const std::size_t c3_new =
      static_cast<std::size_t>(std::find(reduced.channel_labels.begin(),
                                         reduced.channel_labels.end(), "C3") -
                               reduced.channel_labels.begin());
  for (std::size_t t = 0; t < 20; ++t)
    CHECK(reduced.at(2, c3_new, t) == doctest::Approx(set.at(2, c3, t)));

  EpochSet again = subset_epochs(reduced, mi);
  CHECK(again.data == reduced.data);  // idempotent

  ChannelSubset identity{set.channel_labels, "manual", ""};
  EpochSet same = subset_epochs(set, identity);
  CHECK(same.data == set.data);

  ChannelSubset empty{{}, "manual", ""};
  CHECK_THROWS(subset_epochs(set, empty));
  ChannelSubset unknown{{"Nope"}, "manual", ""};
  CHECK_THROWS(subset_epochs(set, unknown));
}

TEST_CASE("aggregate_rankings counts top-k membership") {
  std::vector<std::string> base;
  for (int i = 0; i < 12; ++i) base.push_back("ch" + std::to_string(i));
  std::vector<ChannelRanking> rankings;
  for (int s = 0; s < 16; ++s) rankings.push_back(ranking_from(base));
  auto counts = aggregate_rankings(rankings, 10);
  int total = 0;
  for (const auto& [label, c] : counts) total += c;
  CHECK(total == 160);
  CHECK(counts.at("ch0") == 16);  // identical rankings: every top-10 channel counted 16x
  CHECK(counts.at("ch11") == 0);

  auto single = aggregate_rankings({ranking_from(base)}, 3);
  CHECK(single.at("ch1") == 1);
  CHECK(single.at("ch5") == 0);
}

TEST_CASE("subset json round trip") {
  MontageLayout m = bundled_montage();
  auto subset = mi_channels(m);
  save_subset_json("test_subset.json", subset);
  auto back = load_subset_json("test_subset.json");
  CHECK(back.labels == subset.labels);
  CHECK(back.origin == subset.origin);
  std::remove("test_subset.json");
}
