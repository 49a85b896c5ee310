#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "celmnav/imagery.hpp"
#include "celmnav/labels.hpp"
#include "celmnav/navmetrics.hpp"
#include "celmnav/preprocess.hpp"

namespace celmnav {

/// One preprocessed image with its S0 ground truth; id is the manifest index.
struct Sample {
  std::size_t id = 0;
  S2Sample s2;
  GroundTruth truth;
};

/// Preprocessed samples of one split for one labeling strategy.
struct Dataset {
  std::string id;
  std::string body;
  LabelStrategy strategy = LabelStrategy::DeltaRange;
  CameraModel camera;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  /// N x m matrix of S2 targets.
  Eigen::MatrixXd targets() const;
  std::vector<TruthSample> truths() const;
};

struct SplitSet {
  Dataset train, val, test;

  Dataset& get(Split s);
  const Dataset& get(Split s) const;
};

Sample make_sample(std::size_t id, const GrayImage& image_s0, const GroundTruth& truth, LabelStrategy strategy,
                   std::uint64_t seed, const PipelineOptions& options = {});

/// Same images and records with labels recomputed for another strategy.
Dataset relabel(const Dataset& dataset, LabelStrategy strategy);
SplitSet relabel(const SplitSet& splits, LabelStrategy strategy);

/// Loads each manifest image and runs the S0 -> S2 pipeline with the record's seed.
SplitSet preprocess_manifest(const DatasetManifest& manifest, const PipelineOptions& options = {});

/// Writes <dir>/{train,val,test}/{images.f32,labels.csv,records.csv,truth.csv} and <dir>/dataset.json.
void save_splits(const SplitSet& splits, const std::filesystem::path& dir);
SplitSet load_splits(const std::filesystem::path& dir);

}  // namespace celmnav
