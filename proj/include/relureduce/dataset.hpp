#pragma once
#include <cstdint>
#include <string>

#include "relureduce/engine.hpp"

namespace relureduce {

struct DataConfig {
  std::string source = "synthetic-blobs";  // synthetic-blobs | cifar10-binary | cifar100-binary
  std::string data_dir;                    // directory holding the binary batches
  int classes = 4;                         // synthetic only; CIFAR fixes its own
  int resolution = 8;
  int channels = 3;
  long long train_samples = 512;  // subsets CIFAR when smaller than the split
  long long test_samples = 128;
  uint64_t seed = 7;
  bool normalize = true;  // per-channel mean/std fitted on the train split
};

struct DatasetPair {
  Dataset train, test;
};

// Per-class sums of random Gaussian bumps plus pixel noise, balanced labels;
// deterministic in the seed.
Dataset make_blobs(int classes, int resolution, int channels, long long samples,
                   uint64_t seed);

// FNV-1a over image bits and labels, for determinism checks.
uint64_t dataset_checksum(const Dataset& ds);

// Binary batch files: data_batch_1..5.bin / test_batch.bin, 3073-byte records.
Dataset read_cifar10(const std::string& dir, bool train);
// train.bin / test.bin, 3074-byte records; the fine label is used.
Dataset read_cifar100(const std::string& dir, bool train);

// Fit per-channel mean/std on train, apply to both splits.
void normalize_per_channel(Dataset& train, Dataset& test);

DatasetPair ingest_dataset(const DataConfig& cfg);

}  // namespace relureduce
