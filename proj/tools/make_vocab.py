#!/usr/bin/env python3
"""Regenerate the shipped vocabulary files.

general_30k.txt: special tokens, single characters, continuation pieces and
the most frequent lowercase English words from the `wordfreq` frequency lists
(CC-BY-SA 4.0 data). test_100.txt: a small fixed vocabulary used by the tests.
"""
import gzip
import importlib.util
import os
import string
import sys

import msgpack

SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
SUFFIXES = ["s", "es", "ed", "ing", "ly", "er", "ers", "est", "ion", "ions", "tion", "tions",
            "ment", "ments", "ness", "ity", "ities", "al", "ally", "ial", "able", "ible",
            "ize", "ized", "izes", "ise", "ive", "ous", "ful", "less", "ship", "ance", "ence"]


def english_words():
    base = os.path.dirname(importlib.util.find_spec("wordfreq").origin)
    with gzip.open(os.path.join(base, "data", "large_en.msgpack.gz")) as f:
        buckets = msgpack.load(f, raw=False)[1:]
    for bucket in buckets:
        for w in bucket:
            if w.isascii() and w.isalpha() and w.islower():
                yield w


def general(size=30000):
    vocab = list(SPECIALS)
    vocab += list(string.punctuation) + list(string.digits) + list(string.ascii_lowercase)
    vocab += ["##" + c for c in string.digits + string.ascii_lowercase]
    vocab += ["##" + s for s in SUFFIXES if "##" + s not in vocab]
    seen = set(vocab)
    for w in english_words():
        if len(vocab) >= size:
            break
        if w not in seen:
            seen.add(w)
            vocab.append(w)
    return vocab


def test_vocab():
    words = ["the", "bank", "banks", "loan", "loans", "risk", "capital", "income", "net",
             "asset", "assets", "equity", "interest", "rate", "rates", "credit", "deposit",
             "market", "year", "total", "our", "we", "and", "of", "in", "to", "a", "is",
             "increase", "decrease", "million", "billion", "fiscal", "report", "annual",
             "un", "##able", "##s", "##ed", "##ing", "##ly", "##er", "##tion", "##al"]
    vocab = list(SPECIALS) + list(".,;:%$()-") + list(string.digits) + list(string.ascii_lowercase)
    vocab += [w for w in words if w not in vocab]
    vocab = vocab[:100]
    while len(vocab) < 100:
        vocab.append("##" + string.ascii_lowercase[len(vocab) % 26] + str(len(vocab)))
    return vocab


def main(out_dir):
    for name, tokens in (("general_30k.txt", general()), ("test_100.txt", test_vocab())):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as f:
            f.write("\n".join(tokens) + "\n")
        print(name, len(tokens))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/vocab")
