#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "projiql/datasets.hpp"
#include "projiql/errors.hpp"

using namespace projiql;
using namespace projiql::data;

namespace {

DatasetMetadata vector_meta(std::size_t sd = 2, std::size_t ad = 2) {
  DatasetMetadata m;
  m.env_name = "test";
  m.state_dim = sd;
  m.observation_dim = sd;
  m.action_dim = ad;
  return m;
}

envs::Trajectory make_traj(std::size_t length, double offset) {
  envs::Trajectory t;
  for (std::size_t i = 0; i < length; ++i) {
    const double x = offset + static_cast<double>(i);
    t.steps.push_back({{x, -x}, {0.5 * x, 0.25}, i + 1 == length ? 1.0 : 0.0, {x + 1, -x - 1}, i + 1 == length});
  }
  return t;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("projiql_test_" + name)).string();
}

std::vector<double> column_means(const OfflineDataset& d) {
  std::vector<double> out;
  for (const auto* col : {&d.states, &d.actions, &d.rewards, &d.next_states, &d.dones})
    out.push_back(std::accumulate(col->begin(), col->end(), 0.0) / static_cast<double>(col->size()));
  return out;
}

}  // namespace

TEST_CASE("from_trajectories lengths") {
  CHECK(from_trajectories({make_traj(3, 0)}, vector_meta()).size() == 3);
  CHECK_THROWS_AS(from_trajectories({}, vector_meta()), ValidationError);
  CHECK_THROWS_AS(from_trajectories({envs::Trajectory{}}, vector_meta()), ValidationError);

  std::vector<envs::Trajectory> many;
  for (std::size_t len = 2; len <= 11; ++len) many.push_back(make_traj(len, static_cast<double>(len)));
  const OfflineDataset d = from_trajectories(many, vector_meta());
  CHECK(d.size() == 65);
  CHECK(d.states.size() == 130);
  // Order is preserved: the first row is the first step of the first trajectory.
  CHECK(d.states[0] == 2.0);
  CHECK(d.rewards[1] == 1.0);
  CHECK(d.dones[1] == 1.0);
}

TEST_CASE("from_trajectories dimension mismatch") {
  auto bad = make_traj(2, 0);
  bad.steps[1].state.push_back(9.0);
  CHECK_THROWS_AS(from_trajectories({make_traj(2, 0), bad}, vector_meta()), ValidationError);
  auto bad_action = make_traj(2, 0);
  bad_action.steps[0].action = {1.0};
  CHECK_THROWS_AS(from_trajectories({bad_action}, vector_meta()), ValidationError);
}

TEST_CASE("sample_batch determinism and trivial case") {
  const OfflineDataset one = from_trajectories({make_traj(1, 4)}, vector_meta());
  const Batch b = sample_batch(one, 1, 0, 0);
  CHECK(b.rows == std::vector<std::size_t>{0});
  CHECK(b.states == one.states);
  CHECK(b.rewards == one.rewards);

  const OfflineDataset d = from_trajectories({make_traj(20, 0)}, vector_meta());
  CHECK(sample_batch(d, 32, 5, 17).rows == sample_batch(d, 32, 5, 17).rows);
  CHECK(sample_batch(d, 32, 5, 17).rows != sample_batch(d, 32, 5, 18).rows);
  CHECK(sample_batch(d, 32, 5, 17).rows != sample_batch(d, 32, 6, 17).rows);

  OfflineDataset empty;
  empty.meta = vector_meta();
  CHECK_THROWS_AS(sample_batch(empty, 1, 0, 0), ValidationError);
  CHECK_THROWS_AS(sample_batch(d, 0, 0, 0), ValidationError);
}

TEST_CASE("sample_batch is uniform over rows") {
  std::array<double, 4> counts{};
  const std::size_t draws = 100000;
  for (std::size_t step = 0; step < draws / 100; ++step)
    for (std::size_t r : sample_indices(4, 100, 42, step)) counts[r] += 1.0;
  double chi2 = 0.0;
  for (double c : counts) {
    CHECK(std::abs(c / draws - 0.25) < 0.01);
    chi2 += (c - draws / 4.0) * (c - draws / 4.0) / (draws / 4.0);
  }
  // 3 degrees of freedom; 16.27 is the 0.999 quantile.
  CHECK(chi2 < 16.27);
}

TEST_CASE("reward_shift") {
  const OfflineDataset d = from_trajectories({make_traj(4, 0), make_traj(3, 1)}, vector_meta());
  CHECK(reward_shift(d, 0.0) == d);
  const OfflineDataset down = reward_shift(d, -1.0);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(down.rewards[i] == d.rewards[i] - 1.0);
  CHECK(down.meta.reward_shift == -1.0);
  CHECK(std::count(down.rewards.begin(), down.rewards.end(), 0.0) == 2);
  CHECK(std::count(down.rewards.begin(), down.rewards.end(), -1.0) == 5);
  const OfflineDataset back = reward_shift(down, 1.0);
  CHECK(back.rewards == d.rewards);
  CHECK(back.meta.reward_shift == 0.0);
}

TEST_CASE("reward_shift commutes with from_trajectories") {
  std::vector<envs::Trajectory> trajs = {make_traj(5, 0), make_traj(2, 3)};
  const OfflineDataset after = reward_shift(from_trajectories(trajs, vector_meta()), -1.0);
  for (auto& t : trajs)
    for (auto& s : t.steps) s.reward += -1.0;
  DatasetMetadata meta = vector_meta();
  meta.reward_shift = -1.0;
  CHECK(from_trajectories(trajs, meta) == after);
}

TEST_CASE("save and load round trip") {
  std::vector<envs::Trajectory> trajs;
  for (int i = 0; i < 5; ++i) trajs.push_back(make_traj(7, 0.1 * i + 1.0 / 3.0));
  DatasetMetadata meta = vector_meta();
  meta.seed = 123456789012345ULL;
  meta.behavior = "waypoint-noisy epsilon=0.1";
  meta.extra["layout"] = "S.G\n";
  const OfflineDataset d = reward_shift(from_trajectories(trajs, meta), -1.0 / 7.0);
  const std::string path = temp_path("roundtrip.bin");
  save(d, path);
  const OfflineDataset loaded = load(path);
  CHECK(loaded == d);
  CHECK(std::memcmp(loaded.states.data(), d.states.data(), d.states.size() * sizeof(double)) == 0);
  std::filesystem::remove(path);
}

TEST_CASE("large round trip preserves column means exactly") {
  OfflineDataset d;
  d.meta = vector_meta(3, 1);
  StreamRng rng(9, 9);
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      d.states.push_back(rng.normal());
      d.next_states.push_back(rng.normal());
    }
    d.actions.push_back(rng.uniform(-1, 1));
    d.rewards.push_back(rng.uniform());
    d.dones.push_back(rng.bernoulli(0.1) ? 1.0 : 0.0);
  }
  const std::string path = temp_path("large.bin");
  save(d, path);
  const OfflineDataset loaded = load(path);
  CHECK(column_means(loaded) == column_means(d));
  std::filesystem::remove(path);
}

TEST_CASE("container error kinds") {
  const OfflineDataset d = from_trajectories({make_traj(6, 0)}, vector_meta());
  const std::string path = temp_path("errors.bin");
  save(d, path);
  const auto size = std::filesystem::file_size(path);

  std::filesystem::resize_file(path, size - 13);
  CHECK_THROWS_AS(load(path), ChecksumError);

  save(d, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = kFormatVersion + 1;
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  CHECK_THROWS_AS(load(path), VersionError);

  save(d, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size / 2));
    f.put('\x7f');
  }
  CHECK_THROWS_AS(load(path), ChecksumError);

  std::filesystem::resize_file(path, 6);
  CHECK_THROWS_AS(load(path), TruncatedError);
  std::filesystem::remove(path);
}

TEST_CASE("generated gridmaze dataset") {
  const envs::Environment env(envs::build_gridmaze("S..\n.#.\n..G\n"));
  const OfflineDataset d = generate(env, {envs::BehaviorPolicySpec::Kind::uniform_random, 0, 0}, 3, 30);
  CHECK(d.meta.state_kind == ColumnKind::index);
  CHECK(d.meta.observation_dim == 8);
  CHECK(d.meta.action_dim == 4);
  CHECK(d.actions.size() == d.size());
  const auto freq = state_frequencies(d);
  CHECK(std::accumulate(freq.begin(), freq.end(), 0.0) == doctest::Approx(1.0));
  CHECK(generate(env, {envs::BehaviorPolicySpec::Kind::uniform_random, 0, 0}, 3, 30, 4) == d);

  const std::string csv = temp_path("grid.csv");
  export_csv(d, csv);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header == "s0,a0,reward,next_s0,done");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == d.size());
  std::filesystem::remove(csv);
}
