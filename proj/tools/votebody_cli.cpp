#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "votebody/config.hpp"
#include "votebody/gradcheck.hpp"
#include "votebody/mesh_io.hpp"
#include "votebody/pipeline.hpp"

using namespace votebody;

namespace {

constexpr const char* kUsage =
    "usage: votebody <command> [--config FILE] [--KEY VALUE | --KEY=VALUE ...]\n"
    "commands:\n"
    "  generate   write a synthetic training/eval shard (--out PATH, --samples N)\n"
    "  train      optimize on a shard (needs train_shard, checkpoint)\n"
    "  eval       report metrics on a shard (needs eval_shard, checkpoint;\n"
    "             optional --noise-sigma-list MM,... and --points-list N,... sweeps)\n"
    "  infer      reconstruct a body from an \"x y z\" text cloud\n"
    "             (--input PATH --out PREFIX, needs checkpoint)\n"
    "  gradcheck  run the finite-difference gradient suite\n"
    "config keys double as flags, e.g. --points 512 --lambda21 0\n";

struct CliArgs {
  RunConfig cfg;
  // command-specific extras
  std::string out;
  std::string input;
  int64_t samples = 64;
  int64_t cameras = 10;
  std::vector<double> noise_list_mm;
  std::vector<int64_t> points_list;
  double tol = 1e-3;
};

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(item);
  return out;
}

// flags mirror config keys and override the file; a few extras are consumed
// here and never reach the config layer
CliArgs parse_args(int argc, char** argv) {
  CliArgs a;
  std::vector<std::pair<std::string, std::string>> pending;
  std::string config_path;
  for (int i = 2; i < argc; ++i) {
    std::string key = argv[i];
    if (key.rfind("--", 0) != 0) throw std::invalid_argument("expected --flag, got " + key);
    key = key.substr(2);
    std::string value;
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= argc) throw std::invalid_argument("flag --" + key + " needs a value");
      value = argv[++i];
    }
    if (key == "config") config_path = value;
    else pending.emplace_back(key, value);
  }
  if (!config_path.empty()) load_config_file(a.cfg, config_path);
  for (const auto& [key, value] : pending) {
    if (key == "out") a.out = value;
    else if (key == "input") a.input = value;
    else if (key == "samples") a.samples = detail::to_int(key, value);
    else if (key == "cameras") a.cameras = detail::to_int(key, value);
    else if (key == "tol") a.tol = detail::to_double(key, value);
    else if (key == "noise-sigma-list") {
      for (const auto& tok : split_commas(value)) a.noise_list_mm.push_back(detail::to_double(key, tok));
    } else if (key == "points-list") {
      for (const auto& tok : split_commas(value)) a.points_list.push_back(detail::to_int(key, tok));
    } else {
      apply_config_entry(a.cfg, key, value);
    }
  }
  return a;
}

GenerateOptions generate_options(const CliArgs& a, double noise_sigma, int64_t points) {
  GenerateOptions opt;
  opt.num_samples = a.samples;
  opt.points_per_sample = points;
  opt.noise_sigma = noise_sigma;
  opt.num_cameras = static_cast<int64_t>(a.cameras);
  opt.seed = a.cfg.seed;
  return opt;
}

int cmd_generate(const CliArgs& a) {
  if (a.out.empty()) throw std::invalid_argument("generate: --out PATH required");
  const BodyModel<double> body = body_from_config<double>(a.cfg);
  const auto samples = generate_dataset(body, generate_options(a, a.cfg.noise_sigma, a.cfg.points));
  save_shard(a.out, samples);
  std::cout << "generated=" << samples.size() << " points=" << a.cfg.points
            << " noise_sigma=" << a.cfg.noise_sigma << " out=" << a.out << "\n";
  return 0;
}

int cmd_train(const CliArgs& a) {
  const TrainResult r = train_run<float>(a.cfg, std::cout);
  std::cout << "train_steps=" << r.steps_run << " first_loss=" << r.first_loss
            << " final_loss=" << r.final_loss << " checkpoint=" << a.cfg.checkpoint << "\n";
  return r.aborted_non_finite ? 1 : 0;
}

int cmd_eval(const CliArgs& a) {
  if (a.cfg.eval_shard.empty() && a.noise_list_mm.empty() && a.points_list.empty())
    throw std::invalid_argument("eval: eval_shard (or a sweep list) required");
  if (a.cfg.checkpoint.empty()) throw std::invalid_argument("eval: checkpoint required");
  const BodyModel<float> body = body_from_config<float>(a.cfg);
  Rng rng(a.cfg.seed);
  ParamStore<float> params = register_pipeline_params<float>(rng, body.num_joints());
  load_checkpoint(a.cfg.checkpoint, params);

  if (!a.cfg.eval_shard.empty()) {
    const auto samples = load_shard(a.cfg.eval_shard);
    emit_metrics(std::cout, "", evaluate_dataset(params, body, samples));
  }
  if (!a.noise_list_mm.empty() || !a.points_list.empty()) {
    const BodyModel<double> gen_body = body_from_config<double>(a.cfg);
    for (const double mm : a.noise_list_mm) {
      const auto samples = generate_dataset(gen_body, generate_options(a, mm / 1000.0, a.cfg.points));
      std::ostringstream prefix;
      prefix << "noise_sigma_mm=" << mm << " ";
      emit_metrics(std::cout, prefix.str(), evaluate_dataset(params, body, samples));
    }
    for (const int64_t pts : a.points_list) {
      const auto samples = generate_dataset(gen_body, generate_options(a, a.cfg.noise_sigma, pts));
      std::ostringstream prefix;
      prefix << "points=" << pts << " ";
      emit_metrics(std::cout, prefix.str(), evaluate_dataset(params, body, samples));
    }
  }
  return 0;
}

int cmd_infer(const CliArgs& a) {
  if (a.input.empty() || a.out.empty()) throw std::invalid_argument("infer: --input and --out required");
  if (a.cfg.checkpoint.empty()) throw std::invalid_argument("infer: checkpoint required");
  const BodyModel<float> body = body_from_config<float>(a.cfg);
  Rng rng(a.cfg.seed);
  ParamStore<float> params = register_pipeline_params<float>(rng, body.num_joints());
  load_checkpoint(a.cfg.checkpoint, params);

  const Tensor<float> raw = read_xyz(a.input);
  const auto pred = infer_cloud(a.cfg, params, body, raw);
  write_obj(a.out + ".obj", pred.posed.vertices, body.faces);
  write_ply(a.out + ".ply", pred.posed.vertices, body.faces);

  std::ofstream rec(a.out + ".params.txt");
  if (!rec) throw std::runtime_error("cannot open " + a.out + ".params.txt");
  rec << "betas";
  for (int64_t i = 0; i < kShapeDims; ++i) rec << " " << pred.params.betas.at(i);
  rec << "\ntranslation " << pred.params.translation.at(0) << " " << pred.params.translation.at(1) << " "
      << pred.params.translation.at(2) << "\nroot";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rec << " " << pred.params.root_rotation.at(i, j);
  rec << "\n";
  for (int64_t k = 0; k + 1 < body.num_joints(); ++k) {
    rec << "joint" << (k + 1);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) rec << " " << pred.params.local_rotations.at(k, i, j);
    rec << "\n";
  }

  std::ofstream votes(a.out + ".votes.txt");
  if (!votes) throw std::runtime_error("cannot open " + a.out + ".votes.txt");
  for (int64_t i = 0; i < pred.voted_joints.shape[0]; ++i)
    votes << pred.labels[static_cast<size_t>(i)] << " " << pred.voted_joints.at(i, 0) << " "
          << pred.voted_joints.at(i, 1) << " " << pred.voted_joints.at(i, 2) << "\n";

  std::cout << "mesh_vertices=" << pred.posed.vertices.shape[0] << " faces=" << body.num_faces()
            << " out=" << a.out << ".obj\n";
  return 0;
}

int cmd_gradcheck(const CliArgs& a) {
  const auto report =
      run_gradient_suite(a.cfg.toy_joints, a.cfg.toy_vertices, a.cfg.points, a.cfg.seed, &std::cout);
  std::cout << "gradcheck max_rel=" << report.max_rel << " pass=" << (report.pass(a.tol) ? 1 : 0) << "\n";
  return report.pass(a.tol) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << kUsage;
    return 1;
  }
  const std::string cmd = argv[1];
  try {
    const CliArgs args = parse_args(argc, argv);
    if (cmd == "generate") return cmd_generate(args);
    if (cmd == "train") return cmd_train(args);
    if (cmd == "eval") return cmd_eval(args);
    if (cmd == "infer") return cmd_infer(args);
    if (cmd == "gradcheck") return cmd_gradcheck(args);
    std::cerr << "error=unknown command \"" << cmd << "\"\n" << kUsage;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error=" << e.what() << "\n";
    return 1;
  }
}
