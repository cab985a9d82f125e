#pragma once

#include <string>
#include <vector>

#include "intuit/tensor.hpp"

namespace intuit {

// Contiguous token id layout shared by the world, the reasoner and the
// calibrator:
//   [0, C*E)            evidence tokens, E variants per class
//   [C*E, C*E+F)        filler tokens
//   C*E+F               negation token
//   next 7              structural: <think> </think> <answer> </answer>
//                       <eos> <sep> <malformed>
//   next C              answer tokens, one per class
//   next L+1            count tokens 0..L (appear only inside traces)
class Vocab {
 public:
  Vocab(int num_classes, int evidence_per_class, int num_fillers,
        int max_count)
      : c_(num_classes),
        e_(evidence_per_class),
        f_(num_fillers),
        max_count_(max_count) {}

  int num_classes() const { return c_; }
  int evidence_per_class() const { return e_; }
  int num_fillers() const { return f_; }
  int max_count() const { return max_count_; }

  int evidence(int cls, int variant) const { return cls * e_ + variant; }
  int filler(int i) const { return c_ * e_ + i; }
  int negation() const { return c_ * e_ + f_; }
  int think_open() const { return negation() + 1; }
  int think_close() const { return negation() + 2; }
  int answer_open() const { return negation() + 3; }
  int answer_close() const { return negation() + 4; }
  int eos() const { return negation() + 5; }
  int sep() const { return negation() + 6; }
  int malformed() const { return negation() + 7; }
  int answer(int cls) const { return negation() + 8 + cls; }
  int count(int n) const { return negation() + 8 + c_ + n; }
  int size() const { return negation() + 8 + c_ + max_count_ + 1; }

  bool is_evidence(int t) const { return t >= 0 && t < c_ * e_; }
  int evidence_class(int t) const { return t / e_; }
  bool is_filler(int t) const { return t >= c_ * e_ && t < c_ * e_ + f_; }
  bool is_negation(int t) const { return t == negation(); }
  bool is_world_token(int t) const { return t >= 0 && t <= negation(); }
  bool is_structural(int t) const {
    return t >= think_open() && t <= malformed();
  }
  bool is_answer(int t) const {
    return t >= answer(0) && t < answer(0) + c_;
  }
  int answer_class(int t) const { return t - answer(0); }
  bool is_count(int t) const {
    return t >= count(0) && t < count(0) + max_count_ + 1;
  }
  int count_value(int t) const { return t - count(0); }

  std::string token_name(int t) const {
    if (is_evidence(t))
      return "e" + std::to_string(evidence_class(t)) + "." +
             std::to_string(t % e_);
    if (is_filler(t)) return "f" + std::to_string(t - filler(0));
    if (is_negation(t)) return "NEG";
    if (t == think_open()) return "<think>";
    if (t == think_close()) return "</think>";
    if (t == answer_open()) return "<answer>";
    if (t == answer_close()) return "</answer>";
    if (t == eos()) return "<eos>";
    if (t == sep()) return "<sep>";
    if (t == malformed()) return "<malformed>";
    if (is_answer(t)) return "c" + std::to_string(answer_class(t));
    if (is_count(t)) return "n" + std::to_string(count_value(t));
    return "?" + std::to_string(t);
  }

 private:
  int c_;
  int e_;
  int f_;
  int max_count_;
};

}  // namespace intuit
