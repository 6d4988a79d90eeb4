#include "rat/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rat {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::ToyTranslate: return "toy_translate";
    case TaskKind::WindowClassify: return "window_classify";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "copy") return TaskKind::Copy;
  if (s == "reverse") return TaskKind::Reverse;
  if (s == "toy_translate") return TaskKind::ToyTranslate;
  if (s == "window_classify") return TaskKind::WindowClassify;
  throw std::invalid_argument("unknown task kind '" + s + "'");
}

namespace {

TokenSequence random_tokens(RngStream& rng, std::size_t vocab, std::size_t length) {
  TokenSequence s(length);
  for (auto& t : s) t = kFirstContentToken + rng.uniform_int(vocab - kFirstContentToken);
  return s;
}

void check_vocab(std::size_t vocab) {
  if (vocab < kFirstContentToken + 1)
    throw std::invalid_argument("vocabulary must hold PAD/BOS/EOS plus at least one content token");
}

template <typename T>
void shuffle(std::vector<T>& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_int(i)]);
}

TokenSequence wrap(const TokenSequence& content) {
  TokenSequence s{kBos};
  s.insert(s.end(), content.begin(), content.end());
  s.push_back(kEos);
  return s;
}

}  // namespace

std::vector<Example> gen_copy_task(RngStream& rng, std::size_t vocab, std::size_t length,
                                   std::size_t n) {
  check_vocab(vocab);
  std::vector<Example> out(n);
  for (auto& ex : out) {
    ex.source = random_tokens(rng, vocab, length);
    ex.target = ex.source;
  }
  return out;
}

std::vector<Example> gen_reverse_task(RngStream& rng, std::size_t vocab, std::size_t length,
                                      std::size_t n) {
  auto out = gen_copy_task(rng, vocab, length, n);
  for (auto& ex : out) std::reverse(ex.target.begin(), ex.target.end());
  return out;
}

// ---------------------------------------------------------------------------

void ToyTranslateSpec::validate() const {
  if (source_symbols < 2) throw std::invalid_argument("toy translate needs at least 2 source symbols");
  if (!(ambiguity_rate >= 0.0 && ambiguity_rate < 0.5))
    throw std::invalid_argument("ambiguity rate must lie in [0, 0.5)");
  if (!(seen_context_fraction > 0.0 && seen_context_fraction <= 1.0))
    throw std::invalid_argument("seen context fraction must lie in (0, 1]");
  if (length == 0) throw std::invalid_argument("sequence length must be positive");
}

Token ToyTranslateTask::translate_one(Token s, Token previous) const {
  if (s >= source_vocab || s < kFirstContentToken) throw std::out_of_range("source token out of range");
  if (ambiguous(s) && pick_alternate[s * target_vocab + previous]) return alternate[s];
  return primary[s];
}

TokenSequence ToyTranslateTask::translate(const TokenSequence& source) const {
  TokenSequence out;
  Token prev = kBos;
  for (auto s : source) {
    prev = translate_one(s, prev);
    out.push_back(prev);
  }
  return out;
}

ToyTranslateData gen_toy_translate(RngStream& rng, const ToyTranslateSpec& spec) {
  spec.validate();
  const std::size_t symbols = spec.source_symbols;
  std::size_t n_ambiguous =
      static_cast<std::size_t>(std::llround(spec.ambiguity_rate * static_cast<double>(symbols)));
  if (spec.ambiguity_rate > 0.0) n_ambiguous = std::max<std::size_t>(n_ambiguous, 1);

  ToyTranslateData data;
  auto& task = data.task;
  task.source_vocab = kFirstContentToken + symbols;
  task.target_vocab = kFirstContentToken + symbols + n_ambiguous;
  task.primary.assign(task.source_vocab, kPad);
  task.alternate.assign(task.source_vocab, kPad);
  task.pick_alternate.assign(task.source_vocab * task.target_vocab, 0);
  task.seen.assign(task.source_vocab * task.target_vocab, 1);

  RngStream map_rng = rng.split("mapping");
  std::vector<Token> sources(symbols);
  std::iota(sources.begin(), sources.end(), kFirstContentToken);
  shuffle(sources, map_rng);
  std::vector<Token> targets(symbols + n_ambiguous);
  std::iota(targets.begin(), targets.end(), kFirstContentToken);
  shuffle(targets, map_rng);

  // Contexts an ambiguous symbol can follow: BOS or any content target.
  std::vector<Token> contexts{kBos};
  for (Token t = kFirstContentToken; t < task.target_vocab; ++t) contexts.push_back(t);

  std::size_t next_target = 0;
  for (std::size_t i = 0; i < symbols; ++i) {
    const Token s = sources[i];
    task.primary[s] = targets[next_target++];
    if (i >= n_ambiguous) continue;
    task.alternate[s] = targets[next_target++];
    auto order = contexts;
    shuffle(order, map_rng);
    for (std::size_t c = 0; c < order.size(); ++c)
      task.pick_alternate[s * task.target_vocab + order[c]] = c % 2;
    shuffle(order, map_rng);
    const auto n_seen = static_cast<std::size_t>(
        std::ceil(spec.seen_context_fraction * static_cast<double>(order.size())));
    for (std::size_t c = 0; c < order.size(); ++c)
      task.seen[s * task.target_vocab + order[c]] = c < n_seen;
  }

  auto unrestricted = [&](RngStream& r, std::size_t n) {
    std::vector<Example> out(n);
    for (auto& ex : out) {
      ex.source = random_tokens(r, task.source_vocab, spec.length);
      ex.target = task.translate(ex.source);
    }
    return out;
  };
  // Parallel data: ambiguous symbols only after contexts marked seen.
  auto restricted = [&](RngStream& r, std::size_t n) {
    std::vector<Example> out(n);
    for (auto& ex : out) {
      Token prev = kBos;
      for (std::size_t i = 0; i < spec.length; ++i) {
        Token s;
        do {
          s = kFirstContentToken + r.uniform_int(symbols);
        } while (task.ambiguous(s) && !task.seen[s * task.target_vocab + prev]);
        ex.source.push_back(s);
        prev = task.translate_one(s, prev);
        ex.target.push_back(prev);
      }
    }
    return out;
  };

  RngStream train_rng = rng.split("train"), dev_rng = rng.split("dev"),
            test_rng = rng.split("test"), text_rng = rng.split("extended");
  data.train = restricted(train_rng, spec.n_train);
  data.dev = unrestricted(dev_rng, spec.n_dev);
  data.test = unrestricted(test_rng, spec.n_test);
  for (const auto& ex : data.train) data.in_domain_text.push_back(wrap(ex.target));
  data.extended_text = data.in_domain_text;
  for (const auto& ex : unrestricted(text_rng, spec.n_extended))
    data.extended_text.push_back(wrap(ex.target));
  return data;
}

// ---------------------------------------------------------------------------

ImageTaskData gen_window_images(RngStream& rng, const ImageTaskSpec& spec) {
  if (spec.classes < 2 || spec.pattern == 0 || spec.pattern > spec.height ||
      spec.pattern > spec.width || spec.channels == 0)
    throw std::invalid_argument("invalid image task sizes");
  RngStream pattern_rng = rng.split("patterns");
  const std::size_t pat = spec.pattern * spec.pattern * spec.channels;
  std::vector<double> patterns(spec.classes * pat);
  for (auto& v : patterns) v = pattern_rng.bernoulli(0.5) ? 1.0 : -1.0;

  auto make = [&](RngStream& r, std::size_t n) {
    ImageSet set;
    set.height = spec.height;
    set.width = spec.width;
    set.channels = spec.channels;
    const std::size_t per = spec.height * spec.width * spec.channels;
    set.pixels.resize(n * per);
    for (std::size_t i = 0; i < n; ++i) {
      double* img = set.pixels.data() + i * per;
      for (std::size_t j = 0; j < per; ++j) img[j] = r.normal(0.0, spec.noise);
      const std::size_t label = r.uniform_int(spec.classes);
      const std::size_t y0 = r.uniform_int(spec.height - spec.pattern + 1);
      const std::size_t x0 = r.uniform_int(spec.width - spec.pattern + 1);
      const double* p = patterns.data() + label * pat;
      for (std::size_t y = 0; y < spec.pattern; ++y)
        for (std::size_t x = 0; x < spec.pattern; ++x)
          for (std::size_t c = 0; c < spec.channels; ++c)
            img[((y0 + y) * spec.width + (x0 + x)) * spec.channels + c] +=
                p[(y * spec.pattern + x) * spec.channels + c];
      set.labels.push_back(label);
    }
    return set;
  };
  RngStream train_rng = rng.split("train"), dev_rng = rng.split("dev"), test_rng = rng.split("test");
  return {make(train_rng, spec.n_train), make(dev_rng, spec.n_dev), make(test_rng, spec.n_test)};
}

// ---------------------------------------------------------------------------

ToyTranslateSpec TaskSpec::translate_spec() const {
  ToyTranslateSpec t;
  t.source_symbols = source_symbols;
  t.ambiguity_rate = ambiguity_rate;
  t.seen_context_fraction = seen_context_fraction;
  t.length = length;
  t.n_train = n_train;
  t.n_dev = n_dev;
  t.n_test = n_test;
  t.n_extended = n_extended;
  return t;
}

ImageTaskSpec TaskSpec::image_spec() const {
  ImageTaskSpec s;
  s.height = height;
  s.width = width;
  s.channels = channels;
  s.classes = classes;
  s.pattern = pattern;
  s.noise = noise;
  s.n_train = n_train;
  s.n_dev = n_dev;
  s.n_test = n_test;
  return s;
}

Json to_json(const TaskSpec& t) {
  return {{"kind", to_string(t.kind)},
          {"data_seed", t.data_seed},
          {"length", t.length},
          {"n_train", t.n_train},
          {"n_dev", t.n_dev},
          {"n_test", t.n_test},
          {"n_extended", t.n_extended},
          {"vocab", t.vocab},
          {"source_symbols", t.source_symbols},
          {"ambiguity_rate", t.ambiguity_rate},
          {"seen_context_fraction", t.seen_context_fraction},
          {"height", t.height},
          {"width", t.width},
          {"channels", t.channels},
          {"classes", t.classes},
          {"pattern", t.pattern},
          {"noise", t.noise}};
}

TaskSpec task_spec_from_json(const Json& j) {
  check_keys(j,
             {"kind", "data_seed", "length", "n_train", "n_dev", "n_test", "n_extended", "vocab",
              "source_symbols", "ambiguity_rate", "seen_context_fraction", "height", "width",
              "channels", "classes", "pattern", "noise"},
             "task");
  TaskSpec t;
  if (j.contains("kind")) t.kind = task_kind_from_string(j.at("kind").get<std::string>());
  auto read = [&j](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  read("data_seed", t.data_seed);
  read("length", t.length);
  read("n_train", t.n_train);
  read("n_dev", t.n_dev);
  read("n_test", t.n_test);
  read("n_extended", t.n_extended);
  read("vocab", t.vocab);
  read("source_symbols", t.source_symbols);
  read("ambiguity_rate", t.ambiguity_rate);
  read("seen_context_fraction", t.seen_context_fraction);
  read("height", t.height);
  read("width", t.width);
  read("channels", t.channels);
  read("classes", t.classes);
  read("pattern", t.pattern);
  read("noise", t.noise);
  return t;
}

SequenceData make_sequence_data(const TaskSpec& spec) {
  RngStream rng(spec.data_seed, "data");
  SequenceData d;
  if (spec.kind == TaskKind::ToyTranslate) {
    auto t = gen_toy_translate(rng, spec.translate_spec());
    d.train = std::move(t.train);
    d.dev = std::move(t.dev);
    d.test = std::move(t.test);
    d.in_domain_text = std::move(t.in_domain_text);
    d.extended_text = std::move(t.extended_text);
    d.source_vocab = t.task.source_vocab;
    d.target_vocab = t.task.target_vocab;
  } else if (spec.kind == TaskKind::Copy || spec.kind == TaskKind::Reverse) {
    auto gen = spec.kind == TaskKind::Copy ? gen_copy_task : gen_reverse_task;
    RngStream train_rng = rng.split("train"), dev_rng = rng.split("dev"),
              test_rng = rng.split("test"), text_rng = rng.split("extended");
    d.train = gen(train_rng, spec.vocab, spec.length, spec.n_train);
    d.dev = gen(dev_rng, spec.vocab, spec.length, spec.n_dev);
    d.test = gen(test_rng, spec.vocab, spec.length, spec.n_test);
    for (const auto& ex : d.train) d.in_domain_text.push_back(wrap(ex.target));
    d.extended_text = d.in_domain_text;
    for (const auto& ex : gen(text_rng, spec.vocab, spec.length, spec.n_extended))
      d.extended_text.push_back(wrap(ex.target));
    d.source_vocab = d.target_vocab = spec.vocab;
  } else {
    throw std::invalid_argument("task " + to_string(spec.kind) + " is not a sequence task");
  }
  d.max_length = spec.length + 1;
  return d;
}

ImageTaskData make_image_data(const TaskSpec& spec) {
  if (spec.kind != TaskKind::WindowClassify)
    throw std::invalid_argument("task " + to_string(spec.kind) + " is not an image task");
  RngStream rng(spec.data_seed, "data");
  return gen_window_images(rng, spec.image_spec());
}

}  // namespace rat
