#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "intuit/rng.hpp"
#include "intuit/tensor.hpp"
#include "intuit/vocab.hpp"

namespace intuit {

struct WorldConfig {
  int num_classes = 4;
  int evidence_tokens_per_class = 3;
  int num_filler_tokens = 20;
  int sequence_length = 24;
  std::vector<int> train_templates = {0, 1, 2, 3};
  std::vector<int> eval_templates = {4, 5, 6, 7};
  double teacher_noise_rate = 0.1;
  std::uint64_t seed = 1;

  Vocab vocab() const {
    return Vocab(num_classes, evidence_tokens_per_class, num_filler_tokens,
                 sequence_length);
  }
  int negation_token() const { return vocab().negation(); }

  void validate() const {
    if (num_classes < 2)
      throw ParameterError("world: num_classes must be >= 2");
    if (evidence_tokens_per_class < 2)
      throw ParameterError("world: evidence_tokens_per_class must be >= 2");
    if (num_filler_tokens < num_classes)
      throw ParameterError("world: need at least one filler per class");
    if (sequence_length < 8)
      throw ParameterError("world: sequence_length must be >= 8");
    if (teacher_noise_rate < 0.0 || teacher_noise_rate >= 1.0)
      throw ParameterError("world: teacher_noise_rate must be in [0,1)");
    if (train_templates.empty() || eval_templates.empty())
      throw ParameterError("world: template families must be nonempty");
    std::set<int> train(train_templates.begin(), train_templates.end());
    for (int t : eval_templates)
      if (train.count(t))
        throw ParameterError(
            "world: train and eval template families must be disjoint");
  }
};

enum class Split { cold_start, grpo, calibration, eval };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::cold_start: return "cold_start";
    case Split::grpo: return "grpo";
    case Split::calibration: return "calibration";
    case Split::eval: return "eval";
  }
  return "?";
}

inline Split split_from_name(const std::string& s) {
  if (s == "cold_start") return Split::cold_start;
  if (s == "grpo") return Split::grpo;
  if (s == "calibration") return Split::calibration;
  if (s == "eval") return Split::eval;
  throw ParameterError("unknown split name: " + s);
}

struct Instance {
  long id = 0;
  std::vector<int> tokens;
  int label = 0;
  int template_id = 0;
  Split split = Split::cold_start;
};

struct LabelResult {
  int label = 0;
  std::vector<int> counts;  // effective count per class
};

// Effective count for class c = class-c evidence tokens not immediately
// followed by the negation token. Label = argmax, ties toward smallest id.
inline LabelResult label_rule(const std::vector<int>& tokens,
                              const WorldConfig& cfg) {
  Vocab v = cfg.vocab();
  LabelResult res;
  res.counts.assign(cfg.num_classes, 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    int t = tokens[i];
    if (!v.is_world_token(t))
      throw VocabularyError("label_rule: token " + std::to_string(t) +
                            " is not a world token");
    if (v.is_evidence(t)) {
      bool negated = i + 1 < tokens.size() && v.is_negation(tokens[i + 1]);
      if (!negated) res.counts[v.evidence_class(t)] += 1;
    }
  }
  res.label = 0;
  for (int c = 1; c < cfg.num_classes; ++c)
    if (res.counts[c] > res.counts[res.label]) res.label = c;
  return res;
}

namespace detail {

// Template recipes. Both families obey the same evidence/negation mechanics;
// what shifts is how often negated runs flip the raw counts away from the
// effective counts, and where evidence sits. Train templates flip rarely and
// confine evidence to a template-specific window; eval templates scatter
// evidence anywhere and flip often, so raw token statistics point at the
// wrong class while the cancellation rule still yields the gold label.
struct TemplateRecipe {
  bool is_eval = false;
  double flip_prob = 0.25;  // negated run outweighs the gold raw count
  int max_decoys = 1;       // extra cancelled pairs on arbitrary classes
  int window_start = 0;     // evidence window in cells; -1 = scattered
  int window_len = 0;
  double high_count_prob = 0.0;  // dense near-tie instances (eval only)
};

inline TemplateRecipe recipe_for(const WorldConfig& cfg, int template_id) {
  bool is_eval =
      std::find(cfg.eval_templates.begin(), cfg.eval_templates.end(),
                template_id) != cfg.eval_templates.end();
  std::uint64_t h = Rng::stream(0xdecafbad, static_cast<std::uint64_t>(
                                                template_id)).next_u64();
  TemplateRecipe r;
  r.is_eval = is_eval;
  if (is_eval) {
    r.flip_prob = 0.42 + 0.04 * static_cast<double>(h % 3);
    r.max_decoys = 3;
    r.window_start = -1;
    r.high_count_prob = 0.5;
  } else {
    r.flip_prob = 0.22 + 0.03 * static_cast<double>(h % 3);
    r.max_decoys = 2;
    // evidence windows rotate through the sequence across templates
    int style = template_id % 4;
    int half = cfg.sequence_length / 2;
    if (style == 3) {
      r.window_start = -1;  // one spread template per family rotation
    } else {
      r.window_start = style * (cfg.sequence_length - half) / 2;
      r.window_len = half;
    }
  }
  return r;
}

// A cell is one or two adjacent tokens (a decoy pair stays adjacent so its
// negation keeps cancelling the right evidence token).
using Cell = std::vector<int>;

inline std::vector<int> flatten(const std::vector<Cell>& cells) {
  std::vector<int> out;
  for (const Cell& c : cells) out.insert(out.end(), c.begin(), c.end());
  return out;
}

}  // namespace detail

// Generates one instance with the requested gold label. Resamples until the
// label rule yields a unique argmax equal to the request.
inline Instance generate_instance(const WorldConfig& cfg, int template_id,
                                  int gold, long id, Split split, Rng& rng) {
  Vocab v = cfg.vocab();
  detail::TemplateRecipe rec = detail::recipe_for(cfg, template_id);
  const int C = cfg.num_classes, E = cfg.evidence_tokens_per_class,
            F = cfg.num_filler_tokens, L = cfg.sequence_length;

  for (int attempt = 0; attempt < 200; ++attempt) {
    // effective counts with a strict argmax at gold; high-count instances
    // (always flipped) push effective counts to magnitudes the train family
    // never states, with every non-gold class close behind the gold class
    std::vector<int> counts(C, 0);
    bool high_count = rng.next_bernoulli(rec.high_count_prob);
    if (high_count) {
      counts[gold] = 5;
      for (int c = 0; c < C; ++c)
        if (c != gold) counts[c] = 3;
    } else {
      counts[gold] = std::max(2, L / 12) + static_cast<int>(rng.next_index(2));
      for (int c = 0; c < C; ++c)
        if (c != gold)
          counts[c] = static_cast<int>(rng.next_index(counts[gold]));
    }

    std::vector<detail::Cell> evidence_cells;
    int used = 0;
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < counts[c]; ++i) {
        if (used + 1 > L - 2) break;
        evidence_cells.push_back(
            {v.evidence(c, static_cast<int>(rng.next_index(E)))});
        used += 1;
      }

    // Negated runs: evidence immediately cancelled by negation. A flip run
    // lifts one non-gold class's raw count above the gold class's, so raw
    // statistics disagree with the effective counts. Decoy pairs scatter
    // further cancellations over arbitrary classes, so the total negation
    // count does not reveal which class the cancellations hit.
    if (high_count || rng.next_bernoulli(rec.flip_prob)) {
      int flip_cls = static_cast<int>(rng.next_index(C - 1));
      if (flip_cls >= gold) flip_cls += 1;
      int want = counts[gold] - counts[flip_cls] + 1 +
                 static_cast<int>(rng.next_index(2));
      for (int i = 0; i < want && used + 2 <= L - 1; ++i) {
        evidence_cells.push_back(
            {v.evidence(flip_cls, static_cast<int>(rng.next_index(E))),
             v.negation()});
        used += 2;
      }
    }
    int decoys = static_cast<int>(rng.next_index(
        static_cast<std::size_t>(rec.max_decoys) + 1));
    for (int i = 0; i < decoys && used + 2 <= L - 1; ++i) {
      int cls = static_cast<int>(rng.next_index(C));
      evidence_cells.push_back(
          {v.evidence(cls, static_cast<int>(rng.next_index(E))),
           v.negation()});
      used += 2;
    }

    int filler_count = L - used;
    std::vector<detail::Cell> filler_cells;
    for (int i = 0; i < filler_count; ++i)
      filler_cells.push_back({v.filler(static_cast<int>(rng.next_index(F)))});

    std::vector<int> tokens;
    if (rec.window_start < 0) {
      std::vector<detail::Cell> cells = evidence_cells;
      cells.insert(cells.end(), filler_cells.begin(), filler_cells.end());
      rng.shuffle(cells);
      tokens = detail::flatten(cells);
    } else {
      // evidence confined to the template's window, fillers fore and aft
      std::vector<detail::Cell> window = evidence_cells;
      std::size_t fill_used = 0;
      while (detail::flatten(window).size() + 1 <=
                 static_cast<std::size_t>(rec.window_len) &&
             fill_used < filler_cells.size()) {
        window.push_back(filler_cells[fill_used]);
        fill_used += 1;
      }
      rng.shuffle(window);
      std::vector<detail::Cell> rest(filler_cells.begin() +
                                         static_cast<long>(fill_used),
                                     filler_cells.end());
      rng.shuffle(rest);
      std::size_t lead = std::min(rest.size(),
                                  static_cast<std::size_t>(rec.window_start));
      std::vector<detail::Cell> cells(rest.begin(),
                                      rest.begin() + static_cast<long>(lead));
      cells.insert(cells.end(), window.begin(), window.end());
      cells.insert(cells.end(), rest.begin() + static_cast<long>(lead),
                   rest.end());
      tokens = detail::flatten(cells);
    }

    LabelResult lr = label_rule(tokens, cfg);
    bool unique = true;
    for (int c = 0; c < C; ++c)
      if (c != lr.label && lr.counts[c] == lr.counts[lr.label]) unique = false;
    if (lr.label != gold || !unique) continue;

    Instance inst;
    inst.id = id;
    inst.tokens = std::move(tokens);
    inst.label = gold;
    inst.template_id = template_id;
    inst.split = split;
    return inst;
  }
  throw ContractError("generate_instance: could not realize gold label " +
                      std::to_string(gold));
}

struct SplitSizes {
  int cold_start = 1000;
  int grpo = 3000;
  int calibration = 4000;
  int eval = 1000;
};

struct Datasets {
  std::vector<Instance> cold_start, grpo, calibration, eval;
};

// Extra instances from a given family, outside the four standard splits
// (used by probes and diagnostics). Ids are offset so streams never collide
// with the standard splits.
inline std::vector<Instance> generate_instances(const WorldConfig& cfg,
                                                const std::vector<int>& family,
                                                int n, Split split,
                                                long id_base) {
  std::vector<Instance> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    long id = id_base + i;
    Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(id));
    int gold = i % cfg.num_classes;
    int template_id =
        family[rng.next_index(family.size())];
    out.push_back(generate_instance(cfg, template_id, gold, id, split, rng));
  }
  return out;
}

inline Datasets generate_splits(const WorldConfig& cfg,
                                const SplitSizes& sizes) {
  cfg.validate();
  if (sizes.cold_start <= 0 || sizes.grpo <= 0 || sizes.calibration <= 0 ||
      sizes.eval <= 0)
    throw ParameterError("generate_splits: sizes must be positive");
  Datasets d;
  long id = 0;
  auto fill = [&](std::vector<Instance>& out, int n, Split split,
                  const std::vector<int>& family) {
    out = generate_instances(cfg, family, n, split, id);
    id += n;
  };
  fill(d.cold_start, sizes.cold_start, Split::cold_start, cfg.train_templates);
  fill(d.grpo, sizes.grpo, Split::grpo, cfg.train_templates);
  fill(d.calibration, sizes.calibration, Split::calibration,
       cfg.train_templates);
  fill(d.eval, sizes.eval, Split::eval, cfg.eval_templates);
  return d;
}

// ---- teacher ---------------------------------------------------------------

struct TeacherTrace {
  std::vector<int> trace_tokens;  // R*: enumeration, then count statements
  int provisional = 0;            // conclusion stated by the trace
  bool is_corrupted = false;
};

// Scripted teacher. The trace walks x position by position and enumerates
// what survives the negation rule: the evidence token itself when it counts,
// the negation token when it is cancelled, and a count-0 placeholder
// otherwise. Per-class count statements and the argmax conclusion follow.
// Each enumeration step depends only on x[j] and x[j+1], so the walk is the
// local computation that resolves cancellation; the counts are then plain
// tallies over the enumeration. With probability eps_t one count is
// perturbed and the conclusion follows the perturbed counts.
inline TeacherTrace teacher_reason(const Instance& inst, const WorldConfig& cfg,
                                   double eps_t, Rng& rng) {
  Vocab v = cfg.vocab();
  LabelResult lr = label_rule(inst.tokens, cfg);
  TeacherTrace out;
  const std::vector<int>& x = inst.tokens;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (v.is_evidence(x[j])) {
      bool cancelled = j + 1 < x.size() && x[j + 1] == v.negation();
      out.trace_tokens.push_back(cancelled ? v.negation() : x[j]);
    } else {
      out.trace_tokens.push_back(v.count(0));
    }
  }
  std::vector<int> counts = lr.counts;
  out.is_corrupted = rng.next_bernoulli(eps_t);
  if (out.is_corrupted) {
    int c = static_cast<int>(rng.next_index(cfg.num_classes));
    int delta = counts[c] == 0 ? 1 : (rng.next_bernoulli(0.5) ? 1 : -1);
    counts[c] = std::min(counts[c] + delta, cfg.sequence_length);
  }
  for (int c = 0; c < cfg.num_classes; ++c) {
    out.trace_tokens.push_back(v.answer(c));
    out.trace_tokens.push_back(v.count(counts[c]));
  }
  out.provisional = 0;
  for (int c = 1; c < cfg.num_classes; ++c)
    if (counts[c] > counts[out.provisional]) out.provisional = c;
  return out;
}

// ---- JSON Lines persistence ------------------------------------------------

struct TeacherExample {
  Instance instance;
  TeacherTrace trace;
};

inline void write_instances_jsonl(const std::string& path,
                                  const std::vector<Instance>& instances) {
  std::ofstream f(path);
  if (!f) throw TensorError("cannot open " + path + " for writing");
  for (const Instance& in : instances) {
    nlohmann::json j;
    j["id"] = in.id;
    j["split"] = split_name(in.split);
    j["tokens"] = in.tokens;
    j["label"] = in.label;
    j["template_id"] = in.template_id;
    f << j.dump() << "\n";
  }
}

inline std::vector<Instance> read_instances_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw TensorError("cannot open " + path);
  std::vector<Instance> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Instance in;
    in.id = j.at("id").get<long>();
    in.split = split_from_name(j.at("split").get<std::string>());
    in.tokens = j.at("tokens").get<std::vector<int>>();
    in.label = j.at("label").get<int>();
    in.template_id = j.at("template_id").get<int>();
    out.push_back(std::move(in));
  }
  return out;
}

inline void write_teacher_jsonl(const std::string& path,
                                const std::vector<TeacherExample>& examples) {
  std::ofstream f(path);
  if (!f) throw TensorError("cannot open " + path + " for writing");
  for (const TeacherExample& ex : examples) {
    nlohmann::json j;
    j["id"] = ex.instance.id;
    j["split"] = split_name(ex.instance.split);
    j["tokens"] = ex.instance.tokens;
    j["label"] = ex.instance.label;
    j["template_id"] = ex.instance.template_id;
    j["trace_tokens"] = ex.trace.trace_tokens;
    j["provisional"] = ex.trace.provisional;
    j["is_corrupted"] = ex.trace.is_corrupted;
    f << j.dump() << "\n";
  }
}

inline std::vector<TeacherExample> read_teacher_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw TensorError("cannot open " + path);
  std::vector<TeacherExample> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    TeacherExample ex;
    ex.instance.id = j.at("id").get<long>();
    ex.instance.split = split_from_name(j.at("split").get<std::string>());
    ex.instance.tokens = j.at("tokens").get<std::vector<int>>();
    ex.instance.label = j.at("label").get<int>();
    ex.instance.template_id = j.at("template_id").get<int>();
    ex.trace.trace_tokens = j.at("trace_tokens").get<std::vector<int>>();
    ex.trace.provisional = j.at("provisional").get<int>();
    ex.trace.is_corrupted = j.at("is_corrupted").get<bool>();
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<TeacherExample> make_teacher_dataset(
    const WorldConfig& cfg, const std::vector<Instance>& instances,
    double eps_t) {
  std::vector<TeacherExample> out;
  out.reserve(instances.size());
  for (const Instance& in : instances) {
    Rng rng =
        Rng::stream(cfg.seed ^ 0x7ea77ea7ULL, static_cast<std::uint64_t>(in.id));
    out.push_back({in, teacher_reason(in, cfg, eps_t, rng)});
  }
  return out;
}

}  // namespace intuit
