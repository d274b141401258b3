#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "fixtures.hpp"
#include "spanqa/errors.hpp"
#include "spanqa/trainer.hpp"

using namespace spanqa;
using doctest::Approx;

namespace {

struct Tiny {
  test::SyntheticCorpus corpus;
  SquadData data;
  EmbeddingTable table;
  ModelConfig config;
  TrainSettings settings;
};

Tiny make_tiny(std::size_t examples = 8, std::uint64_t seed = 3) {
  Tiny t;
  test::SyntheticOptions so;
  so.examples = examples;
  so.dim = 8;
  so.min_sentences = 2;
  so.max_sentences = 3;
  so.seed = seed;
  t.corpus = test::make_synthetic_corpus(so);
  t.data = parse_squad(t.corpus.squad);
  test::TempDir dir;
  test::write_text(dir / "glove.txt", t.corpus.glove);
  t.table = load_glove(dir / "glove.txt", so.dim);
  t.config.hidden_size = 4;
  t.config.embedding_dim = so.dim;
  t.config.dropout_rate = 0.1;
  t.config.seed = seed;
  t.settings.batch_size = 4;
  return t;
}

Batch first_batch(const Tiny& t) {
  BatchOptions bo;
  bo.batch_size = t.settings.batch_size;
  bo.require_gold = true;
  return build_batches(t.data.examples, t.table, bo).batches.at(0);
}

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::ranges::equal(a.values(), b.values());
}

bool same_values(const ModelParams& a, const ModelParams& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    if (!same(t, b.at(name))) return false;
  }
  return true;
}

std::vector<TrainLogRecord> run(Checkpoint& state, const Tiny& t, std::uint64_t iterations) {
  std::vector<TrainLogRecord> log;
  TrainRunOptions o;
  o.target_iterations = iterations;
  o.on_record = [&](const TrainLogRecord& r) { log.push_back(r); };
  train(state, t.data.examples, t.table, o);
  return log;
}

}  // namespace

TEST_CASE("clip_by_global_norm") {
  ParamGrads g;
  g.emplace("a", Tensor({2}, {3.0, 4.0}));
  g.emplace("b", Tensor({1}, {12.0}));
  CHECK(global_norm(g) == Approx(13.0));
  const double before = clip_by_global_norm(g, 5.0);
  CHECK(before == Approx(13.0));
  CHECK(global_norm(g) <= 5.0 + 1e-9);
  CHECK(g.at("a")[0] == Approx(3.0 * 5.0 / 13.0));

  ParamGrads small;
  small.emplace("a", Tensor({2}, {0.3, 0.4}));
  clip_by_global_norm(small, 5.0);
  CHECK(small.at("a")[0] == 0.3);
}

TEST_CASE("clipped gradients stay under the threshold on random batches") {
  const auto t = make_tiny();
  auto params = init_params(t.config);
  for (auto& [name, p] : params) {
    for (double& v : p.mutable_values()) v *= 40.0;
  }
  auto [value, grads] = compute_gradients(params, first_batch(t), t.table, t.config, false, 0);
  CHECK(std::isfinite(value));
  clip_by_global_norm(grads, 5.0);
  CHECK(global_norm(grads) <= 5.0 + 1e-9);
}

TEST_CASE("adam_update") {
  ModelParams p;
  p.emplace("w", Tensor({2}, {1.0, -1.0}));
  ParamGrads g;
  g.emplace("w", Tensor({2}, {0.5, -2.0}));
  auto state = init_adam(p);
  AdamOptions o;
  adam_update(p, g, state, o);
  // The first bias-corrected step moves each coordinate by lr against its gradient sign.
  CHECK(p.at("w")[0] == Approx(1.0 - 1e-3).epsilon(1e-9));
  CHECK(p.at("w")[1] == Approx(-1.0 + 1e-3).epsilon(1e-9));
  CHECK(state.step == 1);

  o.lr = 0.0;
  const auto before = clone(p);
  adam_update(p, g, state, o);
  CHECK(same_values(before, p));
}

TEST_CASE("a non-finite loss names the offending tensor") {
  const auto t = make_tiny();
  auto params = init_params(t.config);
  params.at("start_head.fc2.W").mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
  auto opt = init_adam(params);
  try {
    train_step(params, first_batch(t), opt, t.table, t.config, t.settings.adam, 0);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("start_head.fc2.W") != std::string::npos);
  }
}

TEST_CASE("training lowers the loss") {
  auto t = make_tiny();
  t.config.dropout_rate = 0.0;
  t.settings.adam.lr = 1e-2;
  auto state = initial_state(t.config, t.settings);
  const auto log = run(state, t, 50);
  REQUIRE(log.size() == 50);
  CHECK(log.back().loss < log.front().loss);
  CHECK(state.iteration == 50);
  CHECK(state.rng.counter == 50);
  CHECK(state.optimizer.step == 50);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  auto t = make_tiny();
  t.settings.adam.lr = 0.0;
  auto state = initial_state(t.config, t.settings);
  const auto before = clone(state.params);
  run(state, t, 5);
  CHECK(same_values(before, state.params));
}

TEST_CASE("identical seeds give identical trajectories") {
  const auto t = make_tiny();
  auto a = initial_state(t.config, t.settings);
  auto b = initial_state(t.config, t.settings);
  const auto la = run(a, t, 6);
  const auto lb = run(b, t, 6);
  REQUIRE(la.size() == lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(to_json_line(la[i]) == to_json_line(lb[i]));
  CHECK(same_values(a.params, b.params));

  auto other = t.config;
  other.seed = t.config.seed + 1;
  auto c = initial_state(other, t.settings);
  run(c, t, 6);
  CHECK_FALSE(same_values(a.params, c.params));
}

TEST_CASE("log records") {
  TrainLogRecord r;
  r.iteration = 3;
  r.loss = 1.5;
  CHECK(to_json_line(r) == R"({"iteration":3,"loss":1.5})");
  r.dev_f1 = 50.0;
  r.dev_em = 25.0;
  CHECK(to_json_line(r).find(R"("dev_f1":50.0)") != std::string::npos);
}

TEST_CASE("dev evaluation and best checkpoints") {
  auto t = make_tiny();
  t.settings.eval_every = 2;
  auto state = initial_state(t.config, t.settings);
  std::vector<TrainLogRecord> log;
  int best_calls = 0;
  TrainRunOptions o;
  o.target_iterations = 6;
  o.dev = t.data.examples;
  o.on_record = [&](const TrainLogRecord& r) { log.push_back(r); };
  o.on_best = [&](const Checkpoint& ck) {
    ++best_calls;
    CHECK(ck.best_dev_f1 >= 0.0);
  };
  train(state, t.data.examples, t.table, o);
  REQUIRE(log.size() == 6);
  CHECK_FALSE(log[0].dev_f1);
  CHECK(log[1].dev_f1);
  CHECK(log[5].dev_em);
  CHECK(best_calls >= 1);
}

TEST_CASE("checkpoint round trip") {
  const auto t = make_tiny();
  auto state = initial_state(t.config, t.settings);
  run(state, t, 3);
  state.glove_path = "/data/glove.6B.100d.txt";
  const std::string bytes = serialize_checkpoint(state);
  CHECK(bytes.substr(0, kCheckpointMagic.size()) == kCheckpointMagic);

  const auto back = deserialize_checkpoint(bytes);
  CHECK(back.config == state.config);
  CHECK(back.training == state.training);
  CHECK(back.iteration == 3);
  CHECK(back.rng == state.rng);
  CHECK(back.glove_path == state.glove_path);
  CHECK(back.best_dev_f1 == state.best_dev_f1);
  CHECK(same_values(back.params, state.params));
  CHECK(back.optimizer.step == state.optimizer.step);
  for (const auto& [name, m] : state.optimizer.m) {
    CHECK(same(back.optimizer.m.at(name), m));
    CHECK(same(back.optimizer.v.at(name), state.optimizer.v.at(name)));
    CHECK(back.params.at(name).shape() == state.params.at(name).shape());
  }
  CHECK(serialize_checkpoint(back) == bytes);
}

TEST_CASE("checkpoint files") {
  const auto t = make_tiny();
  auto state = initial_state(t.config, t.settings);
  test::TempDir dir;
  const auto a = dir / "a.ckpt", b = dir / "b.ckpt";
  save_checkpoint(a, state);
  save_checkpoint(b, load_checkpoint(a));
  CHECK(test::read_text(a) == test::read_text(b));
  CHECK_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
  CHECK(files == 2);

  CHECK_THROWS_AS(save_checkpoint(dir / "missing" / "x.ckpt", state), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "nope.ckpt"), CheckpointError);
}

TEST_CASE("corrupt checkpoints are rejected by kind") {
  const auto t = make_tiny();
  const std::string bytes = serialize_checkpoint(initial_state(t.config, t.settings));
  const auto kind_of = [](const std::string& b) {
    try {
      deserialize_checkpoint(b);
    } catch (const CheckpointError& e) {
      return e.kind();
    }
    FAIL("expected CheckpointError");
    return CheckpointError::Kind::Io;
  };
  using Kind = CheckpointError::Kind;

  std::string bad_magic = bytes;
  bad_magic[2] = 'X';
  CHECK(kind_of(bad_magic) == Kind::Magic);
  CHECK(kind_of("") == Kind::Magic);

  CHECK(kind_of(bytes.substr(0, kCheckpointMagic.size() + 4)) == Kind::Truncated);
  CHECK(kind_of(bytes.substr(0, kCheckpointMagic.size() + 40)) == Kind::Truncated);
  CHECK(kind_of(bytes.substr(0, bytes.size() - 8)) == Kind::Truncated);

  std::string future = bytes;
  const auto pos = future.find(R"("format_version":1)");
  REQUIRE(pos != std::string::npos);
  future[pos + std::string(R"("format_version":)").size()] = '2';
  try {
    deserialize_checkpoint(future);
    FAIL("expected a version error");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == Kind::Version);
    CHECK(std::string(e.what()).find("version 2") != std::string::npos);
  }
}

TEST_CASE("resuming reproduces the uninterrupted run") {
  const auto t = make_tiny();
  auto whole = initial_state(t.config, t.settings);
  const auto full_log = run(whole, t, 7);

  auto first = initial_state(t.config, t.settings);
  auto log = run(first, t, 3);
  test::TempDir dir;
  save_checkpoint(dir / "mid.ckpt", first);
  auto resumed = load_checkpoint(dir / "mid.ckpt");
  const auto rest = run(resumed, t, 7);
  log.insert(log.end(), rest.begin(), rest.end());

  REQUIRE(log.size() == full_log.size());
  for (std::size_t i = 0; i < log.size(); ++i) CHECK(to_json_line(log[i]) == to_json_line(full_log[i]));
  CHECK(serialize_checkpoint(resumed) == serialize_checkpoint(whole));
}

TEST_CASE("predict_spans") {
  const auto t = make_tiny();
  const auto params = init_params(t.config);
  const auto preds = predict_spans(t.data.examples, params, t.table, t.config, {5}, 3);
  REQUIRE(preds.size() == t.data.examples.size());
  for (const auto& ex : t.data.examples) {
    const auto& p = preds.at(ex.qid);
    CHECK(p.start <= p.end);
    CHECK(p.end - p.start < 5);
    CHECK(p.answer_text == span_text(ex, p.start, p.end));
  }
  // Batch size does not change the answers.
  const auto one = predict_spans(t.data.examples, params, t.table, t.config, {5}, 1);
  for (const auto& [qid, p] : preds) CHECK(one.at(qid).score == p.score);
}
