#include "relureduce/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "relureduce/errors.hpp"

namespace relureduce {

Dataset make_blobs(int classes, int resolution, int channels, long long samples,
                   uint64_t seed) {
  if (classes < 2 || resolution < 2 || channels < 1 || samples < 1)
    throw config_error("make_blobs: degenerate dataset request");
  rng_stream r(seed);
  const int plane = resolution * resolution;
  const long long per_sample = static_cast<long long>(channels) * plane;

  // Each class is a fixed sum of two Gaussian bumps with per-channel gains.
  std::vector<double> tmpl(static_cast<size_t>(classes) * per_sample, 0.0);
  for (int k = 0; k < classes; ++k)
    for (int b = 0; b < 2; ++b) {
      const double cx = (0.15 + 0.7 * r.uniform()) * resolution;
      const double cy = (0.15 + 0.7 * r.uniform()) * resolution;
      const double s = (0.12 + 0.18 * r.uniform()) * resolution;
      for (int c = 0; c < channels; ++c) {
        const double amp = 1.2 * (2.0 * r.uniform() - 1.0);
        double* dst = tmpl.data() + static_cast<long long>(k) * per_sample +
                      static_cast<long long>(c) * plane;
        for (int y = 0; y < resolution; ++y)
          for (int x = 0; x < resolution; ++x)
            dst[y * resolution + x] +=
                amp * std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) /
                               (2.0 * s * s));
      }
    }

  Dataset ds;
  ds.channels = channels;
  ds.height = resolution;
  ds.width = resolution;
  ds.classes = classes;
  ds.count = samples;
  ds.images.resize(static_cast<size_t>(samples * per_sample));
  ds.labels.resize(static_cast<size_t>(samples));
  for (long long i = 0; i < samples; ++i) {
    const int label = static_cast<int>(i % classes);
    ds.labels[i] = label;
    const double* src = tmpl.data() + static_cast<long long>(label) * per_sample;
    float* dst = ds.images.data() + i * per_sample;
    for (long long j = 0; j < per_sample; ++j)
      dst[j] = static_cast<float>(src[j] + 0.25 * r.normal());
  }
  return ds;
}

uint64_t dataset_checksum(const Dataset& ds) {
  uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  const int32_t header[4] = {ds.channels, ds.height, ds.width, ds.classes};
  mix(header, sizeof header);
  mix(ds.images.data(), ds.images.size() * sizeof(float));
  mix(ds.labels.data(), ds.labels.size() * sizeof(int));
  return h;
}

namespace {

// label_bytes: 1 for the 10-class batches, 2 (coarse, fine) for the 100-class.
Dataset read_cifar_files(const std::vector<std::string>& paths, int label_bytes,
                         int classes) {
  const int plane = 32 * 32;
  const long long record = label_bytes + 3LL * plane;
  Dataset ds;
  ds.channels = 3;
  ds.height = 32;
  ds.width = 32;
  ds.classes = classes;
  std::vector<unsigned char> buf;
  for (const auto& path : paths) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("dataset: cannot open " + path);
    f.seekg(0, std::ios::end);
    const long long size = f.tellg();
    f.seekg(0);
    if (size == 0 || size % record != 0)
      throw config_error("dataset: " + path + " is truncated (size " +
                         std::to_string(size) + " is not a multiple of " +
                         std::to_string(record) + "-byte records)");
    buf.resize(static_cast<size_t>(size));
    f.read(reinterpret_cast<char*>(buf.data()), size);
    if (!f) throw config_error("dataset: short read on " + path);
    const long long n = size / record;
    for (long long i = 0; i < n; ++i) {
      const unsigned char* rec = buf.data() + i * record;
      const int label = rec[label_bytes - 1];  // fine label when two are present
      if (label >= classes)
        throw config_error("dataset: " + path + " carries label " +
                           std::to_string(label) + " outside 0.." +
                           std::to_string(classes - 1));
      ds.labels.push_back(label);
      const unsigned char* px = rec + label_bytes;
      for (int j = 0; j < 3 * plane; ++j)
        ds.images.push_back(static_cast<float>(px[j]) / 255.0f);
    }
    ds.count += n;
  }
  return ds;
}

void truncate_split(Dataset& ds, long long keep) {
  if (keep <= 0 || keep >= ds.count) return;
  ds.count = keep;
  ds.labels.resize(static_cast<size_t>(keep));
  ds.images.resize(static_cast<size_t>(keep * 3LL * ds.height * ds.width));
}

}  // namespace

Dataset read_cifar10(const std::string& dir, bool train) {
  std::vector<std::string> paths;
  if (train)
    for (int i = 1; i <= 5; ++i)
      paths.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  else
    paths.push_back(dir + "/test_batch.bin");
  return read_cifar_files(paths, 1, 10);
}

Dataset read_cifar100(const std::string& dir, bool train) {
  return read_cifar_files({dir + (train ? "/train.bin" : "/test.bin")}, 2, 100);
}

void normalize_per_channel(Dataset& train, Dataset& test) {
  const int C = train.channels;
  const long long plane = static_cast<long long>(train.height) * train.width;
  std::vector<double> mean(C, 0.0), var(C, 0.0);
  for (long long i = 0; i < train.count; ++i)
    for (int c = 0; c < C; ++c) {
      const float* row = train.images.data() + (i * C + c) * plane;
      for (long long j = 0; j < plane; ++j) mean[c] += row[j];
    }
  const double cnt = static_cast<double>(train.count) * plane;
  for (int c = 0; c < C; ++c) mean[c] /= cnt;
  for (long long i = 0; i < train.count; ++i)
    for (int c = 0; c < C; ++c) {
      const float* row = train.images.data() + (i * C + c) * plane;
      for (long long j = 0; j < plane; ++j)
        var[c] += (row[j] - mean[c]) * (row[j] - mean[c]);
    }
  std::vector<float> scale(C), shift(C);
  for (int c = 0; c < C; ++c) {
    const double std = std::sqrt(var[c] / cnt);
    scale[c] = static_cast<float>(1.0 / (std > 1e-8 ? std : 1e-8));
    shift[c] = static_cast<float>(mean[c]);
  }
  for (Dataset* ds : {&train, &test}) {
    const long long dplane = static_cast<long long>(ds->height) * ds->width;
    for (long long i = 0; i < ds->count; ++i)
      for (int c = 0; c < C; ++c) {
        float* row = ds->images.data() + (i * C + c) * dplane;
        for (long long j = 0; j < dplane; ++j) row[j] = (row[j] - shift[c]) * scale[c];
      }
  }
}

DatasetPair ingest_dataset(const DataConfig& cfg) {
  DatasetPair pair;
  if (cfg.source == "synthetic-blobs") {
    // One stream for both splits so the class templates are shared.
    Dataset all = make_blobs(cfg.classes, cfg.resolution, cfg.channels,
                             cfg.train_samples + cfg.test_samples, cfg.seed);
    const long long per = static_cast<long long>(all.channels) * all.height * all.width;
    auto slice = [&](long long from, long long n) {
      Dataset d;
      d.channels = all.channels;
      d.height = all.height;
      d.width = all.width;
      d.classes = all.classes;
      d.count = n;
      d.images.assign(all.images.begin() + from * per,
                      all.images.begin() + (from + n) * per);
      d.labels.assign(all.labels.begin() + from, all.labels.begin() + from + n);
      return d;
    };
    pair.train = slice(0, cfg.train_samples);
    pair.test = slice(cfg.train_samples, cfg.test_samples);
  } else if (cfg.source == "cifar10-binary") {
    pair.train = read_cifar10(cfg.data_dir, true);
    pair.test = read_cifar10(cfg.data_dir, false);
    truncate_split(pair.train, cfg.train_samples);
    truncate_split(pair.test, cfg.test_samples);
  } else if (cfg.source == "cifar100-binary") {
    pair.train = read_cifar100(cfg.data_dir, true);
    pair.test = read_cifar100(cfg.data_dir, false);
    truncate_split(pair.train, cfg.train_samples);
    truncate_split(pair.test, cfg.test_samples);
  } else {
    throw config_error("dataset: unknown source '" + cfg.source + "'");
  }
  if (cfg.normalize) normalize_per_channel(pair.train, pair.test);
  return pair;
}

}  // namespace relureduce
