// Copyright 2026 The Probe Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Rouge reference values for fixed candidate/reference pairs, computed with an
// independent Rouge implementation (same tokenization, no stemming) and frozen.
// expected = {r1 P, R, F, r2 P, R, F, rL P, R, F}.

#include <array>

struct RougeCase {
  const char* candidate;
  const char* reference;
  std::array<double, 9> expected;
};

inline const std::array<RougeCase, 20> kRougeCases = {{
    {"you should", "you should pay",
     {1, 0.66666666666666663, 0.80000000000000004, 1, 0.5, 0.66666666666666663, 1, 0.66666666666666663, 0.80000000000000004}},
    {"You should.", "You should.",
     {1, 1, 1, 1, 1, 1, 1, 1, 1}},
    {"You shouldn't.", "You should.",
     {0.33333333333333331, 0.5, 0.40000000000000002, 0, 0, 0, 0.33333333333333331, 0.5, 0.40000000000000002}},
    {"It is wrong to lie to your boss.", "You should not lie to your boss.",
     {0.5, 0.5714285714285714, 0.53333333333333333, 0.42857142857142855, 0.5, 0.46153846153846151, 0.5, 0.5714285714285714, 0.53333333333333333}},
    {"If you crash into someone's car, you should pay for their repairs.", "You should pay for damage you cause.",
     {0.38461538461538464, 0.7142857142857143, 0.5, 0.25, 0.5, 0.33333333333333331, 0.30769230769230771, 0.5714285714285714, 0.40000000000000002}},
    {"Good", "Bad",
     {0, 0, 0, 0, 0, 0, 0, 0, 0}},
    {"Bad", "Bad",
     {1, 1, 1, 0, 0, 0, 1, 1, 1}},
    {"", "You should.",
     {0, 0, 0, 0, 0, 0, 0, 0, 0}},
    {"the the the", "the cat",
     {0.33333333333333331, 0.5, 0.40000000000000002, 0, 0, 0, 0.33333333333333331, 0.5, 0.40000000000000002}},
    {"the cat sat on the mat", "the mat sat on the cat",
     {1, 1, 1, 0.80000000000000004, 0.80000000000000004, 0.80000000000000016, 0.66666666666666663, 0.66666666666666663, 0.66666666666666663}},
    {"It's good to help friends in need.", "Helping friends is good.",
     {0.25, 0.5, 0.33333333333333331, 0, 0, 0, 0.125, 0.25, 0.16666666666666666}},
    {"Pay for damage you cause.", "pay for the damage that you caused",
     {0.80000000000000004, 0.5714285714285714, 0.66666666666666663, 0.25, 0.16666666666666666, 0.20000000000000001, 0.80000000000000004, 0.5714285714285714, 0.66666666666666663}},
    {"a b c d e", "e d c b a",
     {1, 1, 1, 0, 0, 0, 0.20000000000000001, 0.20000000000000001, 0.20000000000000004}},
    {"Loyalty matters most to family.", "Family loyalty is important.",
     {0.40000000000000002, 0.5, 0.44444444444444448, 0, 0, 0, 0.20000000000000001, 0.25, 0.22222222222222224}},
    {"People shouldn't steal from stores.", "It is wrong to steal.",
     {0.16666666666666666, 0.20000000000000001, 0.1818181818181818, 0, 0, 0, 0.16666666666666666, 0.20000000000000001, 0.1818181818181818}},
    {"You should always be honest with your partner.", "You should be honest with your partner at all times.",
     {0.875, 0.69999999999999996, 0.77777777777777768, 0.7142857142857143, 0.55555555555555558, 0.62500000000000011, 0.875, 0.69999999999999996, 0.77777777777777768}},
    {"42 is the answer", "the answer is 42",
     {1, 1, 1, 0.33333333333333331, 0.33333333333333331, 0.33333333333333331, 0.5, 0.5, 0.5}},
    {"Care", "Care",
     {1, 1, 1, 0, 0, 0, 1, 1, 1}},
    {"...", "nothing here",
     {0, 0, 0, 0, 0, 0, 0, 0, 0}},
    {"It's rude to insult people, and you shouldn't do it.", "It is rude to insult people.",
     {0.41666666666666669, 0.83333333333333337, 0.55555555555555558, 0.27272727272727271, 0.59999999999999998, 0.37499999999999994, 0.41666666666666669, 0.83333333333333337, 0.55555555555555558}},
}};
