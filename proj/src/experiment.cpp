#include "fedsdwc/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fedsdwc::experiment {

using jsonio::json;

namespace {

const json* find_path(const json& j, const std::string& path) {
  const json* cur = &j;
  std::size_t start = 0;
  while (start <= path.size()) {
    std::size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!cur->is_object() || !cur->contains(key)) return nullptr;
    cur = &(*cur)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return cur;
}

template <typename T>
T get_or(const json& j, const std::string& path, T def) {
  const json* v = find_path(j, path);
  if (v == nullptr || v->is_null()) return def;
  try {
    return v->get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config field '" + path + "' has the wrong type");
  }
}

std::vector<double> get_double_list(const json& j, const std::string& path,
                                    std::vector<double> def) {
  const json* v = find_path(j, path);
  if (v == nullptr || v->is_null()) return def;
  if (!v->is_array()) throw ValidationError("config field '" + path + "' must be an array");
  std::vector<double> out;
  for (const auto& el : *v) {
    if (!el.is_number()) throw ValidationError("config field '" + path + "' must hold numbers");
    out.push_back(el.get<double>());
  }
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.corruptions = {{data::CorruptionKind::gaussian_noise, 3},
                   {data::CorruptionKind::brightness, 3},
                   {data::CorruptionKind::contrast, 3},
                   {data::CorruptionKind::blur, 2}};
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c = defaults();
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.out_dir = get_or<std::string>(j, "out_dir", "");

  c.scm.dim_c = get_or<int>(j, "data.dim_c", c.scm.dim_c);
  c.scm.dim_z = get_or<int>(j, "data.dim_z", c.scm.dim_z);
  c.scm.dim_x = get_or<int>(j, "data.dim_x", c.scm.dim_x);
  c.scm.num_classes = get_or<int>(j, "data.num_classes", c.scm.num_classes);
  c.scm.noise_sigma = get_or<double>(j, "data.noise_sigma", c.scm.noise_sigma);
  const json* mix = find_path(j, "data.mixing_seed");
  if (mix != nullptr && !mix->is_null()) {
    c.scm.mixing_seed = mix->get<std::uint64_t>();
    c.mixing_seed_explicit = true;
  }
  std::vector<double> style = get_double_list(j, "data.style_prior_mean", {});
  if (!style.empty()) {
    c.scm.style_prior_mean = Vec(static_cast<Eigen::Index>(style.size()));
    for (std::size_t i = 0; i < style.size(); ++i)
      c.scm.style_prior_mean(static_cast<Eigen::Index>(i)) = style[i];
  }
  c.n_train = get_or<Eigen::Index>(j, "data.n_train", c.n_train);
  c.n_eval = get_or<Eigen::Index>(j, "data.n_eval", c.n_eval);
  c.n_ood = get_or<Eigen::Index>(j, "data.n_ood", c.n_ood);

  c.num_clients = get_or<int>(j, "partition.num_clients", c.num_clients);
  c.concentration = get_or<double>(j, "partition.concentration", c.concentration);

  c.model_config.dim_x = c.scm.dim_x;
  c.model_config.dim_s = get_or<int>(j, "model.dim_s", c.model_config.dim_s);
  c.model_config.dim_z = get_or<int>(j, "model.dim_z", c.model_config.dim_z);
  c.model_config.dim_c = get_or<int>(j, "model.dim_c", c.model_config.dim_c);
  c.model_config.num_classes = c.scm.num_classes;
  c.model_config.hidden_width = get_or<int>(j, "model.hidden_width", c.model_config.hidden_width);
  c.model_config.mixture_components =
      get_or<int>(j, "model.mixture_components", c.model_config.mixture_components);
  c.model_config.causal_mode = model::causal_mode_from_name(
      get_or<std::string>(j, "model.causal_mode", causal_mode_name(c.model_config.causal_mode)));
  c.model_config.mc_samples = get_or<int>(j, "model.mc_samples", c.model_config.mc_samples);

  c.fed_config.rounds = get_or<int>(j, "federation.rounds", c.fed_config.rounds);
  c.fed_config.local_epochs = get_or<int>(j, "federation.local_epochs", c.fed_config.local_epochs);
  c.fed_config.batch_size = get_or<int>(j, "federation.batch_size", c.fed_config.batch_size);
  c.fed_config.learning_rate =
      get_or<double>(j, "federation.learning_rate", c.fed_config.learning_rate);
  c.fed_config.participation_fraction = get_or<double>(j, "federation.participation_fraction",
                                                       c.fed_config.participation_fraction);
  c.fed_config.intervention_scale =
      get_or<double>(j, "federation.intervention_scale", c.fed_config.intervention_scale);
  c.fed_config.fourier_mix_ratio =
      get_or<double>(j, "federation.fourier_mix_ratio", c.fed_config.fourier_mix_ratio);
  c.fed_config.num_clients = c.num_clients;

  c.env_shift_magnitudes =
      get_double_list(j, "evaluation.env_shift_magnitudes", c.env_shift_magnitudes);
  const json* corr = find_path(j, "evaluation.corruptions");
  if (corr != nullptr && !corr->is_null()) {
    if (!corr->is_array())
      throw ValidationError("config field 'evaluation.corruptions' must be an array");
    c.corruptions.clear();
    for (const auto& el : *corr) {
      CorruptionSetSpec cs;
      if (!el.contains("kind"))
        throw ValidationError("config field 'evaluation.corruptions[].kind' is required");
      cs.kind = data::corruption_from_name(el.at("kind").get<std::string>());
      cs.severity = el.value("severity", 3);
      c.corruptions.push_back(cs);
    }
  }
  c.mc_eval = get_or<bool>(j, "evaluation.mc_eval", c.mc_eval);
  c.include_idc_in_id_scores =
      get_or<bool>(j, "evaluation.include_idc_in_id_scores", c.include_idc_in_id_scores);

  c.theory_enabled = get_or<bool>(j, "theory.enabled", c.theory_enabled);
  c.theory_dim_v = get_or<int>(j, "theory.dim_v", c.theory_dim_v);
  c.theory_clients = get_or<int>(j, "theory.num_clients", c.theory_clients);
  c.theory_prior_gap = get_or<double>(j, "theory.prior_gap", c.theory_prior_gap);
  c.theory_sigma_grid = get_double_list(j, "theory.sigma_grid", c.theory_sigma_grid);
  c.theory_num_x = get_or<Eigen::Index>(j, "theory.num_x", c.theory_num_x);

  c.emit_datasets = get_or<bool>(j, "outputs.emit_datasets", c.emit_datasets);
  c.eval_every = get_or<int>(j, "outputs.eval_every", c.eval_every);
  c.parallel_clients = get_or<bool>(j, "outputs.parallel_clients", c.parallel_clients);
  return c;
}

void ExperimentConfig::validate() const {
  scm.validate();
  model_config.validate();
  fed_config.validate();
  if (n_train < 1 || n_eval < 1 || n_ood < 1)
    throw ValidationError("config: dataset sizes must be positive");
  if (num_clients < 1) throw ValidationError("config field 'partition.num_clients' must be >= 1");
  if (!(concentration > 0.0))
    throw ValidationError("config field 'partition.concentration' must be > 0");
  for (const auto& cs : corruptions)
    if (cs.severity < 1 || cs.severity > 5)
      throw ValidationError("config field 'evaluation.corruptions[].severity' must be in 1..5");
  if (out_dir.empty()) throw ValidationError("config: out_dir is required");
}

json ExperimentConfig::resolved() const {
  // out_dir is deliberately not materialized: the resolved config pins the
  // results, not their location
  json j;
  j["seed"] = seed;
  json d;
  d["dim_c"] = scm.dim_c;
  d["dim_z"] = scm.dim_z;
  d["dim_x"] = scm.dim_x;
  d["num_classes"] = scm.num_classes;
  d["noise_sigma"] = scm.noise_sigma;
  json style = json::array();
  Vec sm = scm.resolved_style_mean();
  for (Eigen::Index i = 0; i < sm.size(); ++i) style.push_back(sm(i));
  d["style_prior_mean"] = style;
  d["mixing_seed"] = scm.mixing_seed;
  d["n_train"] = n_train;
  d["n_eval"] = n_eval;
  d["n_ood"] = n_ood;
  j["data"] = d;
  json p;
  p["num_clients"] = num_clients;
  p["concentration"] = concentration;
  j["partition"] = p;
  json m;
  m["dim_s"] = model_config.dim_s;
  m["dim_z"] = model_config.dim_z;
  m["dim_c"] = model_config.dim_c;
  m["hidden_width"] = model_config.hidden_width;
  m["mixture_components"] = model_config.mixture_components;
  m["causal_mode"] = causal_mode_name(model_config.causal_mode);
  m["mc_samples"] = model_config.mc_samples;
  j["model"] = m;
  json f;
  f["rounds"] = fed_config.rounds;
  f["local_epochs"] = fed_config.local_epochs;
  f["batch_size"] = fed_config.batch_size;
  f["learning_rate"] = fed_config.learning_rate;
  f["participation_fraction"] = fed_config.participation_fraction;
  f["intervention_scale"] = fed_config.intervention_scale;
  f["fourier_mix_ratio"] = fed_config.fourier_mix_ratio;
  j["federation"] = f;
  json e;
  json env = json::array();
  for (double g : env_shift_magnitudes) env.push_back(g);
  e["env_shift_magnitudes"] = env;
  json corr = json::array();
  for (const auto& cs : corruptions) {
    json one;
    one["kind"] = data::corruption_name(cs.kind);
    one["severity"] = cs.severity;
    corr.push_back(one);
  }
  e["corruptions"] = corr;
  e["mc_eval"] = mc_eval;
  e["include_idc_in_id_scores"] = include_idc_in_id_scores;
  j["evaluation"] = e;
  json t;
  t["enabled"] = theory_enabled;
  t["dim_v"] = theory_dim_v;
  t["num_clients"] = theory_clients;
  t["prior_gap"] = theory_prior_gap;
  json grid = json::array();
  for (double s : theory_sigma_grid) grid.push_back(s);
  t["sigma_grid"] = grid;
  t["num_x"] = theory_num_x;
  j["theory"] = t;
  json o;
  o["emit_datasets"] = emit_datasets;
  o["eval_every"] = eval_every;
  o["parallel_clients"] = parallel_clients;
  j["outputs"] = o;
  return j;
}

json score_report_json(const eval::ScoreReport& report) {
  json j;
  j["id_acc"] = report.id_acc;
  j["num_id"] = report.num_id;
  json idc;
  for (const auto& [name, acc] : report.idc_acc) idc[name] = acc;
  j["idc_acc"] = idc;
  json idcn;
  for (const auto& [name, n] : report.idc_n) idcn[name] = n;
  j["idc_n"] = idcn;
  j["mean_idc_acc"] = report.mean_idc_acc();
  json det;
  for (const auto& [name, d] : report.detection) {
    json one;
    one["auroc"] = d.auroc;
    one["fpr95"] = d.fpr95;
    one["num_id"] = d.num_id;
    one["num_ood"] = d.num_ood;
    det[name] = one;
  }
  j["detection"] = det;
  return j;
}

eval::ScoreReport score_report_from_json(const json& j) {
  eval::ScoreReport r;
  r.id_acc = j.at("id_acc").get<double>();
  r.num_id = j.at("num_id").get<Eigen::Index>();
  for (const auto& [name, v] : j.at("idc_acc").items()) r.idc_acc[name] = v.get<double>();
  for (const auto& [name, v] : j.at("idc_n").items()) r.idc_n[name] = v.get<Eigen::Index>();
  for (const auto& [name, v] : j.at("detection").items()) {
    eval::DetectionScores d;
    d.auroc = v.at("auroc").get<double>();
    d.fpr95 = v.at("fpr95").get<double>();
    d.num_id = v.at("num_id").get<Eigen::Index>();
    d.num_ood = v.at("num_ood").get<Eigen::Index>();
    r.detection[name] = d;
  }
  return r;
}

std::string score_report_csv(const eval::ScoreReport& report) {
  std::string csv = "metric,value\n";
  csv += "id_acc," + jsonio::format_double(report.id_acc) + "\n";
  for (const auto& [name, acc] : report.idc_acc)
    csv += "idc_acc:" + name + "," + jsonio::format_double(acc) + "\n";
  csv += "mean_idc_acc," + jsonio::format_double(report.mean_idc_acc()) + "\n";
  for (const auto& [name, d] : report.detection) {
    csv += "auroc:" + name + "," + jsonio::format_double(d.auroc) + "\n";
    csv += "fpr95:" + name + "," + jsonio::format_double(d.fpr95) + "\n";
  }
  return csv;
}

namespace {

json loss_breakdown_json(const objective::LossBreakdown& b) {
  json j;
  j["ce"] = b.ce;
  j["elbo_weighted"] = b.elbo_weighted;
  j["recon_x"] = b.recon_x;
  j["recon_xs"] = b.recon_xs;
  j["recon_xz"] = b.recon_xz;
  j["kl_s"] = b.kl_s;
  j["kl_z"] = b.kl_z;
  j["kl_c"] = b.kl_c;
  j["ic"] = b.ic;
  j["total"] = b.total;
  return j;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const std::uint64_t master = config.seed;
  std::filesystem::create_directories(config.out_dir);
  jsonio::write_json(config.out_dir / "config.resolved.json", config.resolved());

  data::ScmModel scm(config.scm);
  data::LabeledDataset train =
      scm.generate(config.n_train, Vec::Zero(config.scm.dim_z), derive_seed(master, "data-train"));
  data::LabeledDataset eval_id =
      scm.generate(config.n_eval, Vec::Zero(config.scm.dim_z), derive_seed(master, "data-eval-id"));

  std::vector<std::pair<std::string, data::LabeledDataset>> eval_sets;
  eval_sets.emplace_back("id", eval_id);
  for (std::size_t i = 0; i < config.env_shift_magnitudes.size(); ++i) {
    double g = config.env_shift_magnitudes[i];
    Vec shift = Vec::Constant(config.scm.dim_z, g);
    eval_sets.emplace_back("env_shift:" + jsonio::format_double(g),
                           scm.generate(config.n_eval, shift,
                                        derive_seed(master, "data-eval-env", i)));
  }
  for (std::size_t i = 0; i < config.corruptions.size(); ++i) {
    const auto& cs = config.corruptions[i];
    std::string name = data::corruption_name(cs.kind) + ":" + std::to_string(cs.severity);
    eval_sets.emplace_back(
        name, data::apply_corruption(eval_id, cs.kind, cs.severity,
                                     derive_seed(master, "data-eval-corr", i)));
  }
  eval_sets.emplace_back("semantic_ood",
                         scm.semantic_ood(config.n_ood, derive_seed(master, "data-ood")));

  data::PartitionSpec partition = data::dirichlet_partition(
      train.labels, config.num_clients, config.concentration, derive_seed(master, "partition"));
  data::save_partition(config.out_dir / "partition.json", partition);

  if (config.emit_datasets) {
    data::save_dataset(config.out_dir / "data" / "train", train);
    for (const auto& [name, ds] : eval_sets) {
      std::string dir_name = name;
      for (char& ch : dir_name)
        if (ch == ':') ch = '_';
      data::save_dataset(config.out_dir / "data" / dir_name, ds);
    }
  }

  fed::FederationConfig fc = config.fed_config;
  fc.num_clients = config.num_clients;
  fc.seed = derive_seed(master, "federation");

  std::ofstream ndjson(config.out_dir / "training_log.ndjson", std::ios::binary);
  if (!ndjson) throw IoError("cannot open training_log.ndjson for writing");

  std::vector<eval::NamedDataset> named;
  for (const auto& [name, ds] : eval_sets) named.push_back({name, &ds});

  std::map<int, json> snapshots;
  fed::EvalHook hook = nullptr;
  if (config.eval_every > 0) {
    hook = [&](int round, const model::ModelParams& params) {
      if ((round + 1) % config.eval_every != 0) return;
      eval::ScoreReport snap =
          eval::evaluate_suite(params, named, config.mc_eval, derive_seed(master, "eval", round),
                               config.include_idc_in_id_scores);
      snapshots[round] = score_report_json(snap);
    };
  }
  fed::RoundSink sink = [&](const fed::RoundRecord& rec) {
    json j;
    j["round"] = rec.round;
    json parts = json::array();
    for (int p : rec.participants) parts.push_back(p);
    j["participants"] = parts;
    json losses = json::array();
    for (const auto& lb : rec.client_losses) losses.push_back(loss_breakdown_json(lb));
    j["client_losses"] = losses;
    j["wall_time_sec"] = rec.wall_time_sec;
    auto it = snapshots.find(rec.round);
    if (it != snapshots.end()) j["eval"] = it->second;
    ndjson << jsonio::dump(j, 0);
  };

  fed::TrainingLog log =
      fed::run_federation(fc, config.model_config, partition, train, hook, sink,
                          config.parallel_clients);
  ndjson.close();

  eval::ScoreReport scores =
      eval::evaluate_suite(log.final_params, named, config.mc_eval, derive_seed(master, "eval"),
                           config.include_idc_in_id_scores);
  jsonio::write_json(config.out_dir / "scores.json", score_report_json(scores));
  jsonio::write_text(config.out_dir / "scores.csv", score_report_csv(scores));
  model::save_checkpoint(config.out_dir / "checkpoint", log.final_params);

  if (config.theory_enabled) {
    theory::InstanceFamily family = theory::InstanceFamily::canonical(
        config.theory_dim_v, config.theory_clients, derive_seed(master, "theory-family"));
    theory::BoundReport report =
        theory::verify_bound(family, config.theory_sigma_grid, config.theory_prior_gap,
                             config.theory_num_x, derive_seed(master, "theory-mc"));
    theory::write_bound_report_csv(config.out_dir / "bound_report.csv", report);
    theory::write_bound_report_json(config.out_dir / "bound_report.json", report);
  }

  RunResult result;
  result.scores = scores;
  result.final_params = std::move(log.final_params);
  return result;
}

int compare_runs(const std::vector<std::filesystem::path>& run_dirs, std::ostream& out,
                 const std::filesystem::path& csv_path) {
  if (run_dirs.empty()) {
    out << "compare: no run directories given\n";
    return 2;
  }
  struct Row {
    std::string name;
    eval::ScoreReport report;
  };
  std::vector<Row> rows;
  std::vector<std::string> det_names;
  for (const auto& dir : run_dirs) {
    std::filesystem::path scores = dir / "scores.json";
    if (!std::filesystem::exists(scores)) {
      out << "compare: missing scores.json in " << dir.string() << "\n";
      return 2;
    }
    Row row;
    row.name = dir.filename().empty() ? dir.string() : dir.filename().string();
    row.report = score_report_from_json(jsonio::read_json(scores));
    for (const auto& [name, d] : row.report.detection)
      if (std::find(det_names.begin(), det_names.end(), name) == det_names.end())
        det_names.push_back(name);
    rows.push_back(std::move(row));
  }

  std::string header = "run,id_acc,mean_idc_acc";
  for (const auto& name : det_names) header += ",auroc:" + name + ",fpr95:" + name;
  std::string csv = header + "\n";
  out << header << "\n";
  for (const auto& row : rows) {
    std::string line = row.name + "," + jsonio::format_double(row.report.id_acc) + "," +
                       jsonio::format_double(row.report.mean_idc_acc());
    for (const auto& name : det_names) {
      auto it = row.report.detection.find(name);
      if (it == row.report.detection.end()) {
        line += ",,";
      } else {
        line += "," + jsonio::format_double(it->second.auroc) + "," +
                jsonio::format_double(it->second.fpr95);
      }
    }
    out << line << "\n";
    csv += line + "\n";
  }
  if (!csv_path.empty()) jsonio::write_text(csv_path, csv);
  return 0;
}

int partition_stats(const std::filesystem::path& data_dir,
                    const std::filesystem::path& partition_path, std::ostream& out) {
  data::LabeledDataset ds = data::load_dataset(data_dir);
  data::PartitionSpec part = data::load_partition(partition_path);
  part.validate(ds.size());
  std::int64_t num_classes = ds.labels.maxCoeff() + 1;
  out << "client,size,weight";
  for (std::int64_t c = 0; c < num_classes; ++c) out << ",class" << c;
  out << "\n";
  for (int k = 0; k < part.num_clients(); ++k) {
    std::vector<Eigen::Index> hist(static_cast<std::size_t>(num_classes), 0);
    for (Eigen::Index idx : part.client_indices[static_cast<std::size_t>(k)])
      ++hist[static_cast<std::size_t>(ds.labels(idx))];
    out << k << "," << part.client_indices[static_cast<std::size_t>(k)].size() << ","
        << jsonio::format_double(part.client_weights(k));
    for (std::int64_t c = 0; c < num_classes; ++c)
      out << "," << hist[static_cast<std::size_t>(c)];
    out << "\n";
  }
  return 0;
}

}  // namespace fedsdwc::experiment
