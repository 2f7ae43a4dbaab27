// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <unistd.h>

#include "cisprobe/cisprobe.hpp"

namespace cisprobe::testing {

/// Two subcategories, small enough to sweep in a unit test.
inline const char* kTinyTaxonomy = R"({
  "version": "test-1",
  "categories": [
    {"name": "Animals", "subcategories": [
      {"name": "Pets", "question_template": "Is there a <concept> in the image?",
       "concepts": ["dog", "cat"],
       "contexts": [{"name": "park", "template": "an image of a park[ with <a> <concept>]"},
                    {"name": "sofa", "template": "a photo of a sofa[ with <a> <concept> on it]"}],
       "variants": {"park": ["a picture of a green park[ with <a> <concept>]", "a sunny park[ and <a> <concept>] in spring"]}}
    ]},
    {"name": "Demographics", "subcategories": [
      {"name": "Age group", "question_template": "Is the person in the image <concept>?",
       "concepts": ["old", "young"],
       "contexts": [{"name": "cafe", "template": "a photo of <a> <concept> person in a cafe"}]}
    ]}
  ]
})";

inline Taxonomy tiny_taxonomy() { return load_taxonomy(kTinyTaxonomy); }

inline Taxonomy full_taxonomy() { return load_taxonomy_file(std::string(CISPROBE_SOURCE_DIR) + "/data/taxonomy.json"); }

/// Pair whose concept is a single word, for backend-level tests.
inline PromptPair simple_pair(const std::string& surface = "dog") {
    ConceptEntry e{"Animals", "Pets", surface, "Is there a <concept> in the image?"};
    return make_pair(e, {"park", "an image of a park[ with <a> <concept>]"});
}

inline SyntheticBackendSpec spec_with_lock(std::size_t T, const std::string& surface, double lock) {
    SyntheticBackendSpec spec;
    spec.grid = TimestepGrid(T);
    spec.lock_tau[surface] = lock;
    return spec;
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("cisprobe-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace cisprobe::testing
