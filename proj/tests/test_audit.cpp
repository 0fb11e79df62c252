#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "aaud/audit.hpp"
#include "aaud/error.hpp"
#include "aaud/parallel.hpp"

using namespace aaud;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::io;
}

SynthConfig small_config(std::uint64_t seed = 5) {
  SynthConfig c;
  c.model = {64, 8, 32, 4, 0.0, 3};
  c.suite.count = 30;
  c.suite.seed = seed;
  return c;
}

AssembledSuite assemble(const SynthOutput& out) {
  // Through the encoded bytes, as the command-line path does.
  const auto tensors = dump::decode(dump::encode(out.tensors));
  return assemble_records(parse_manifest(manifest_to_json(out.manifest)), tensors);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("aaud_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(AAUD_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("synthetic suite passes validation and the sidecar AAIs match the audit") {
  const auto out = run_synth(small_config());
  const auto tensors = dump::decode(dump::encode(out.tensors));
  CHECK_NOTHROW(validate_manifest(out.manifest, tensors));
  auto suite = assemble(out);
  const auto rep = run_audit(suite, "t", RunOptions{});
  const auto truth = json::parse(out.ground_truth_json);
  REQUIRE(truth["instances"].size() == rep.rows.size());
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const auto& g = truth["instances"][i];
    CHECK(g["instance_id"] == rep.rows[i].instance_id);
    CHECK(std::abs(g["measured"]["aai"].get<double>() - rep.rows[i].aai) <= 1e-6);
    CHECK(std::abs(g["planted"]["aai"].get<double>() - rep.rows[i].aai) <= 1e-5);
  }
}

TEST_CASE("har_like suite: negative bAAI and user CIR above sensor CIR") {
  auto suite = assemble(run_synth(small_config()));
  const auto rep = run_audit(suite, "t", RunOptions{});
  CHECK(rep.aggregates.trust.baai < 0.0);
  CHECK(rep.aggregates.cir_sensor_mean < rep.aggregates.cir_user_mean);
  CHECK(rep.aggregates.aai_mean < 0.0);
  REQUIRE(rep.aggregates.cir_wilcoxon.result);
  CHECK(rep.aggregates.cir_wilcoxon.result->p_value < 1e-3);
}

TEST_CASE("aggregates equal a recomputation from the emitted rows") {
  auto suite = assemble(run_synth(small_config(8)));
  const auto rep = run_audit(suite, "t", RunOptions{});
  const auto j = json::parse(to_json(rep));
  std::size_t s = 0, u = 0, inv = 0;
  double aai = 0.0, cs = 0.0, cu = 0.0;
  for (const auto& r : j["rows"]) {
    const auto joint = r["decisions"]["joint"].get<TokenId>();
    s += joint == r["sensor_answer"].get<TokenId>();
    u += joint == r["user_answer"].get<TokenId>();
    inv += r["observed_joint_margin"].get<double>() < 0.0;
    aai += r["aai"].get<double>();
    cs += r["cir_sensor"].get<double>();
    cu += r["cir_user"].get<double>();
  }
  const double n = double(j["rows"].size());
  const auto& a = j["aggregates"];
  CHECK(a["count_sensor"] == s);
  CHECK(a["count_user"] == u);
  CHECK(a["inversion_observed"] == inv);
  CHECK(a["aai_mean"].get<double>() == doctest::Approx(aai / n).epsilon(1e-12));
  CHECK(a["cir_sensor_mean"].get<double>() == doctest::Approx(cs / n).epsilon(1e-12));
  CHECK(a["cir_user_mean"].get<double>() == doctest::Approx(cu / n).epsilon(1e-12));
  CHECK(a["trust_sign_test"]["p_value"].get<double>() ==
        doctest::Approx(stats::binomial_sign_test(s, s + u, 0.5).p_value));

  // The library-side aggregate over the same rows is identical too.
  const auto again = aggregate(rep.rows);
  CHECK(again.aai_mean == rep.aggregates.aai_mean);
  CHECK(again.margin_pearson.result->statistic == rep.aggregates.margin_pearson.result->statistic);

  // CSV rows carry the same values at full precision.
  std::istringstream csv(to_csv(rep));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "# aaud audit-rows-v1");
  std::getline(csv, line);
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    REQUIRE(cells.size() == 30);
    CHECK(std::stod(cells[23]) == rep.rows[rows].aai);
    ++rows;
  }
  CHECK(rows == rep.rows.size());
}

TEST_CASE("reports are identical across runs and thread counts") {
  const auto out = run_synth(small_config(9));
  RunOptions o;
  o.seed = 77;
  o.trials = 2;
  const std::vector<InterventionKind> kinds = {InterventionKind::ablate_random, InterventionKind::inject_random,
                                               InterventionKind::inject_theory};
  auto once = [&] {
    auto suite = assemble(out);
    auto a = run_audit(suite, "t", o);
    auto i = run_interventions(suite, "t", kinds, true, o);
    auto g = run_gac(suite, "t", o);
    return to_json(a) + to_csv(a) + to_json(i) + to_csv(i) + to_json(g) + to_csv(g);
  };
  const int saved = parallel::max_threads();
  parallel::set_threads(1);
  const std::string one = once();
  parallel::set_threads(3);
  const std::string three = once();
  parallel::set_threads(saved);
  CHECK(one == three);
  CHECK(once() == one);
}

TEST_CASE("synth seeds change tensors but not the schema") {
  const auto a = run_synth(small_config(1));
  const auto b = run_synth(small_config(2));
  CHECK(a.tensors.size() == b.tensors.size());
  auto ia = a.tensors.entries().begin();
  auto ib = b.tensors.entries().begin();
  bool differs = false;
  for (; ia != a.tensors.entries().end(); ++ia, ++ib) {
    CHECK(ia->first == ib->first);
    CHECK(ia->second.dims == ib->second.dims);
    if (ia->first.find("/joint") != std::string::npos) differs |= ia->second.values != ib->second.values;
  }
  CHECK(differs);
  CHECK(run_synth(small_config(1)).ground_truth_json == a.ground_truth_json);
}

TEST_CASE("GAC endpoints through the suite runner") {
  auto suite = assemble(run_synth(small_config(4)));
  RunOptions o;
  o.alpha = 1.0;
  o.layers = 3;
  const auto one = run_gac(suite, "t", o);
  CHECK(one.accuracy_gac == one.accuracy_joint);
  o.alpha = 0.0;
  o.layers = 8;
  const auto zero = run_gac(suite, "t", o);
  CHECK(zero.accuracy_gac == zero.accuracy_baseline);
  o.layers = 9;
  CHECK(code_of([&] { run_gac(suite, "t", o); }) == ErrorCode::domain);
}

TEST_CASE("synth config parsing") {
  const auto c = parse_synth_config(R"({"model": {"hidden_dim": 32, "seed": 4},
                                        "suite": {"regime": "health_like", "count": 7, "fixed_user_layer": 5},
                                        "per_layer_tensors": true})");
  CHECK(c.model.hidden_dim == 32);
  CHECK(c.model.num_layers == 24);
  CHECK(c.suite.regime == Regime::health_like);
  CHECK(c.suite.fixed_user_layer == std::optional<std::size_t>(5));
  CHECK(c.per_layer_tensors);
  CHECK(code_of([] { parse_synth_config(R"({"modle": {}})"); }) == ErrorCode::domain);
  CHECK(code_of([] { parse_synth_config(R"({"suite": {"regime": "lab"}})"); }) == ErrorCode::domain);
  CHECK(code_of([] { parse_synth_config(R"({"suite": {"count": "many"}})"); }) == ErrorCode::domain);
  CHECK(code_of([] { parse_synth_config(R"({"model": {"hidden_dim": 4}})"); }) == ErrorCode::domain);
  CHECK(code_of([] { parse_synth_config("[1,"); }) == ErrorCode::domain);
}

TEST_CASE("per-layer synth output assembles to the same records") {
  auto cfg = small_config(6);
  cfg.suite.count = 4;
  auto whole = assemble(run_synth(cfg));
  cfg.per_layer_tensors = true;
  auto split = assemble(run_synth(cfg));
  CHECK(split.full_traces);
  CHECK(to_json(run_audit(whole, "t", {})) == to_json(run_audit(split, "t", {})));
}

TEST_CASE("command line: outputs, determinism and exit codes") {
  const auto dir = scratch("cli");
  std::ofstream(dir / "cfg.json") << R"({"model": {"hidden_dim": 48, "num_layers": 6, "vocab_size": 20, "seed": 2},
                                        "suite": {"count": 12, "seed": 3}})";
  const std::string synth = "synth --config " + (dir / "cfg.json").string() + " --out " + (dir / "s").string();
  REQUIRE(run_cli(synth) == 0);
  const std::string in = " --manifest " + (dir / "s/manifest.json").string() + " --dump " + (dir / "s/dump.aaud").string();

  for (const char* sub : {"audit", "intervene --layers-patching --trials 3", "gac"}) {
    CHECK(run_cli(std::string(sub) + in + " --format both --seed 5 --out " + (dir / "r1").string()) == 0);
    CHECK(run_cli(std::string(sub) + in + " --format both --seed 5 --out " + (dir / "r2").string()) == 0);
  }
  for (const char* f : {"audit.json", "audit.csv", "interventions.json", "interventions.csv", "gac.json", "gac.csv"}) {
    const auto a = slurp(dir / "r1" / f);
    CHECK_FALSE(a.empty());
    CHECK(a == slurp(dir / "r2" / f));
  }
  const auto meta = json::parse(slurp(dir / "r1/interventions.json"))["metadata"];
  CHECK(meta["options"]["trials"] == 3);
  CHECK(meta["options"]["seed"] == 5);

  // Empty instance list: manifest error.
  auto m = json::parse(slurp(dir / "s/manifest.json"));
  m["instances"] = json::array();
  std::ofstream(dir / "empty.json") << m.dump();
  CHECK(run_cli("audit --manifest " + (dir / "empty.json").string() + " --dump " + (dir / "s/dump.aaud").string() +
                " --out " + (dir / "r3").string()) == 2);

  // Corrupted dump: decode error.
  auto bytes = slurp(dir / "s/dump.aaud");
  bytes[bytes.size() / 2] ^= 0x55;
  std::ofstream(dir / "bad.aaud", std::ios::binary) << bytes;
  CHECK(run_cli("audit --manifest " + (dir / "s/manifest.json").string() + " --dump " + (dir / "bad.aaud").string() +
                " --out " + (dir / "r3").string()) == 3);

  // Missing file: I/O error.
  CHECK(run_cli("audit --manifest " + (dir / "s/manifest.json").string() + " --dump " + (dir / "none.aaud").string() +
                " --out " + (dir / "r3").string()) == 5);

  // Final-state-only manifest: GAC needs layer traces.
  dump::TensorSet finals;
  const auto full = dump::read_dump(dir / "s/dump.aaud");
  for (const auto& [name, t] : full.entries()) {
    if (t.dims.size() == 2 && name.find('/') != std::string::npos && name.rfind("unembed", 0) != 0) {
      finals.add(name, dump::Tensor{{t.dims[1]}, std::vector<float>(t.values.end() - long(t.dims[1]), t.values.end())});
    } else {
      finals.add(name, t);
    }
  }
  dump::write_dump(finals, dir / "finals.aaud");
  const std::string fin_in = " --manifest " + (dir / "s/manifest.json").string() + " --dump " + (dir / "finals.aaud").string();
  CHECK(run_cli("audit" + fin_in + " --out " + (dir / "r4").string()) == 0);
  CHECK(run_cli("gac" + fin_in + " --out " + (dir / "r4").string()) == 2);
  CHECK(run_cli("intervene --layers-patching" + fin_in + " --out " + (dir / "r4").string()) == 2);
  CHECK(run_cli("intervene" + fin_in + " --out " + (dir / "r4").string()) == 0);

  // Usage errors come from the argument parser.
  CHECK(run_cli("intervene --kinds ablate_everything" + in + " --out " + (dir / "r4").string()) != 0);
  CHECK(run_cli("audit --format xml" + in + " --out " + (dir / "r4").string()) != 0);
  fs::remove_all(dir);
}
