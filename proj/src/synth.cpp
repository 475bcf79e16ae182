#include <cmath>
#include <sstream>

#include "wscl/data.hpp"
#include "wscl/error.hpp"
#include "wscl/rng.hpp"

namespace wscl {

void SynthSpec::validate() const {
  if (tasks == 0 || classes_per_task == 0) throw Error(ErrorCode::InvalidArgument, "synth: tasks and classes_per_task must be positive");
  if (samples_per_class < 2) throw Error(ErrorCode::InvalidArgument, "synth: need at least 2 samples per class");
  if (side == 0 || shared_dim == 0) throw Error(ErrorCode::InvalidArgument, "synth: side and shared_dim must be positive");
  if (!(shared_weight >= 0.0 && shared_weight <= 1.0)) throw Error(ErrorCode::InvalidArgument, "synth: shared_weight must lie in [0,1]");
  if (shared_weight < 1.0 && private_dim == 0) throw Error(ErrorCode::InvalidArgument, "synth: private_dim must be positive");
  if (!(mirror >= 0.0 && mirror <= 1.0)) throw Error(ErrorCode::InvalidArgument, "synth: mirror must lie in [0,1]");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw Error(ErrorCode::InvalidArgument, "synth: test_fraction must lie in (0,1)");
  if (dream_classes == 1) throw Error(ErrorCode::InvalidArgument, "synth: dream head needs 0 or >= 2 classes");
  if (dream_classes > 0 && dream_samples_per_class == 0) throw Error(ErrorCode::InvalidArgument, "synth: dream samples per class must be positive");
  if (tasks * classes_per_task + dream_classes > 0xFFFF) throw Error(ErrorCode::InvalidArgument, "synth: too many classes");
}

SynthSpec parse_synth_spec(const std::string& text) {
  std::string body = text;
  if (body.rfind("synth:", 0) == 0) body = body.substr(6);
  SynthSpec spec;
  std::stringstream in(body);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::Config, "synth spec item '" + item + "' lacks '='");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      if (key == "tasks") spec.tasks = std::stoul(value);
      else if (key == "classes_per_task") spec.classes_per_task = std::stoul(value);
      else if (key == "dream_classes") spec.dream_classes = std::stoul(value);
      else if (key == "samples_per_class") spec.samples_per_class = std::stoul(value);
      else if (key == "dream_samples_per_class") spec.dream_samples_per_class = std::stoul(value);
      else if (key == "side") spec.side = std::stoul(value);
      else if (key == "shared_dim") spec.shared_dim = std::stoul(value);
      else if (key == "private_dim") spec.private_dim = std::stoul(value);
      else if (key == "shared_weight") spec.shared_weight = std::stod(value);
      else if (key == "class_separation") spec.class_separation = std::stod(value);
      else if (key == "latent_noise") spec.latent_noise = std::stod(value);
      else if (key == "pixel_noise") spec.pixel_noise = std::stod(value);
      else if (key == "test_fraction") spec.test_fraction = std::stod(value);
      else if (key == "mirror") spec.mirror = std::stod(value);
      else throw Error(ErrorCode::Config, "unknown synth key '" + key + "'");
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::Config, "bad value for synth key '" + key + "': " + value);
    }
  }
  spec.validate();
  return spec;
}

std::string to_string(const SynthSpec& s) {
  std::ostringstream out;
  out << "synth:tasks=" << s.tasks << ",classes_per_task=" << s.classes_per_task << ",dream_classes=" << s.dream_classes
      << ",samples_per_class=" << s.samples_per_class << ",dream_samples_per_class=" << s.dream_samples_per_class
      << ",side=" << s.side << ",shared_dim=" << s.shared_dim << ",private_dim=" << s.private_dim
      << ",shared_weight=" << s.shared_weight << ",class_separation=" << s.class_separation
      << ",latent_noise=" << s.latent_noise << ",pixel_noise=" << s.pixel_noise << ",test_fraction=" << s.test_fraction << ",mirror=" << s.mirror;
  return out.str();
}

namespace {

using Basis = std::vector<std::vector<double>>;  // [direction][pixel]

Basis random_basis(std::size_t count, std::size_t dim, Rng& rng) {
  Basis b(count, std::vector<double>(dim));
  for (auto& dir : b) {
    for (double& v : dir) v = rng.normal();
  }
  return b;
}

struct ClassFamily {
  const Basis* shared;
  const Basis* own;
};

struct Prototype {
  std::vector<double> shared;
  std::vector<double> own;
};

Prototype draw_prototype(const SynthSpec& spec, Rng& rng) {
  Prototype p{std::vector<double>(spec.shared_dim), std::vector<double>(spec.private_dim)};
  for (double& v : p.shared) v = rng.normal();
  for (double& v : p.own) v = rng.normal();
  return p;
}

void emit_sample(const SynthSpec& spec, const ClassFamily& family, const Prototype& proto, Rng& rng,
                 std::vector<float>& out) {
  const std::size_t dim = spec.side * spec.side;
  const double ws = std::sqrt(spec.shared_weight / static_cast<double>(spec.shared_dim));
  const double wp = spec.private_dim ? std::sqrt((1.0 - spec.shared_weight) / static_cast<double>(spec.private_dim)) : 0.0;
  const double sign = spec.mirror > 0.0 && rng.uniform() < spec.mirror ? -1.0 : 1.0;
  std::vector<double> z(spec.shared_dim), u(spec.private_dim);
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = sign * proto.shared[j] + spec.latent_noise * rng.normal();
  for (std::size_t j = 0; j < u.size(); ++j) u[j] = sign * proto.own[j] + spec.latent_noise * rng.normal();
  for (std::size_t p = 0; p < dim; ++p) {
    double h = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) h += ws * z[j] * (*family.shared)[j][p];
    for (std::size_t j = 0; j < u.size(); ++j) h += wp * u[j] * (*family.own)[j][p];
    h = spec.class_separation * h + spec.pixel_noise * rng.normal();
    out.push_back(static_cast<float>(1.0 / (1.0 + std::exp(-h))));
  }
}

}  // namespace

SynthData synth_datasets(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t dim = spec.side * spec.side;
  const std::size_t task_classes = spec.tasks * spec.classes_per_task;
  const std::size_t total_classes = task_classes + spec.dream_classes;

  Rng basis_rng(seed, "synth.basis");
  const Basis shared = random_basis(spec.shared_dim, dim, basis_rng);
  const Basis task_private = random_basis(spec.private_dim, dim, basis_rng);
  const Basis dream_private = random_basis(spec.private_dim, dim, basis_rng);

  auto blank = [&](const std::string& name) {
    LabeledDataset ds;
    ds.name = name;
    ds.sample_shape = {1, spec.side, spec.side};
    ds.num_classes = total_classes;
    return ds;
  };
  SynthData data{blank("synth-train"), blank("synth-test"), blank("synth-dream")};

  const auto test_count = static_cast<std::size_t>(
      std::llround(spec.test_fraction * static_cast<double>(spec.samples_per_class)));
  for (std::size_t c = 0; c < task_classes; ++c) {
    Rng rng(seed, "synth.task_class", c);
    const Prototype proto = draw_prototype(spec, rng);
    std::vector<float> samples;
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      emit_sample(spec, ClassFamily{&shared, &task_private}, proto, rng, samples);
    }
    // Seeded 80/20 split; samples are i.i.d. so a shuffled index list suffices.
    std::vector<std::size_t> order(spec.samples_per_class);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t r = 0; r < order.size(); ++r) {
      LabeledDataset& dst = r < test_count ? data.test : data.train;
      const float* s = &samples[order[r] * dim];
      dst.features.insert(dst.features.end(), s, s + dim);
      dst.labels.push_back(static_cast<int>(c));
    }
  }
  for (std::size_t c = 0; c < spec.dream_classes; ++c) {
    Rng rng(seed, "synth.dream_class", c);
    const Prototype proto = draw_prototype(spec, rng);
    for (std::size_t i = 0; i < spec.dream_samples_per_class; ++i) {
      emit_sample(spec, ClassFamily{&shared, &dream_private}, proto, rng, data.dream.features);
      data.dream.labels.push_back(static_cast<int>(task_classes + c));
    }
  }
  data.train.refresh_class_set();
  data.test.refresh_class_set();
  data.dream.refresh_class_set();
  return data;
}

StreamAndDream synth_stream(const SynthSpec& spec, std::uint64_t seed) {
  SynthData data = synth_datasets(spec, seed);
  StreamAndDream out;
  out.stream = split_class_incremental(data.train, data.test, spec.tasks, seed);
  out.dream.dataset = std::move(data.dream);
  if (out.dream.dataset.size() > 0) check_disjoint(out.stream, out.dream);
  return out;
}

}  // namespace wscl
