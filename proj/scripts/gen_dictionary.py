#!/usr/bin/env python3
# Copyright 2026 The pinyin-mlm Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Regenerates data/pinyin_dict.tsv.

Ranks characters by usage frequency (summed over the jieba word list) and
writes the default (most frequent) reading reported by pypinyin for the top
N characters. Requires `pip install pypinyin jieba`.
"""
import argparse
import collections
import os

import jieba
from pypinyin import Style, pinyin

INITIALS = ["zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l", "g", "k",
            "h", "j", "q", "x", "r", "z", "c", "s", "y", "w"]


# Always shipped so the "jiu" homophone cluster is complete.
ALWAYS = "就九旧酒舅揪咎救久"


def decomposable(toneless):
    for ini in INITIALS:
        if toneless.startswith(ini):
            return len(toneless) > len(ini)
    return True


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=2000)
    ap.add_argument("--out", default="data/pinyin_dict.tsv")
    args = ap.parse_args()

    dict_path = os.path.join(os.path.dirname(jieba.__file__), "dict.txt")
    freq = collections.Counter()
    with open(dict_path, encoding="utf-8") as f:
        for line in f:
            word, count = line.split()[:2]
            for ch in word:
                if "一" <= ch <= "鿿":
                    freq[ch] += int(count)

    rows = []
    ranked = [ch for ch, _ in sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))]
    ranked = [ch for ch in ranked if ch not in ALWAYS]
    budget = args.size - len(ALWAYS)
    for ch in ranked:
        py = pinyin(ch, style=Style.TONE3, neutral_tone_with_five=True)[0][0]
        if not py or not py[-1].isdigit() or not py[:-1].isascii():
            continue
        if not py[:-1].isalpha() or not decomposable(py[:-1]):
            continue
        rows.append((ch, py))
        if len(rows) == budget:
            break
    for ch in ALWAYS:
        rows.append((ch, pinyin(ch, style=Style.TONE3,
                                neutral_tone_with_five=True)[0][0]))

    with open(args.out, "w", encoding="utf-8") as f:
        f.write("# character<TAB>pinyin with tone digit (5 = neutral)\n")
        f.write("# most frequent reading only; ordered by corpus frequency\n")
        for ch, py in rows:
            f.write(f"{ch}\t{py}\n")


if __name__ == "__main__":
    main()
