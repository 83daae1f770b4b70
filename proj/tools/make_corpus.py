#!/usr/bin/env python3
"""Writes the bundled desk corpora: sentences from fixed bigram chains."""
import argparse
import random

# next-token weights per previous token ("<s>" = sentence start, "</s>" = end)
CHAINS = {
    "keyword": {
        "<s>":   {"sun": 60, "cloud": 25, "wind": 10, "cold": 5, "storm": 0.3},
        "sun":   {"cloud": 75, "wind": 8, "sun": 5, "</s>": 12},
        "cloud": {"rain": 70, "wind": 8, "cloud": 5, "storm": 0.3, "</s>": 10},
        "rain":  {"cold": 65, "rain": 10, "storm": 0.15, "</s>": 20},
        "wind":  {"cold": 50, "cloud": 25, "storm": 1, "</s>": 20},
        "cold":  {"sun": 70, "wind": 10, "</s>": 20},
        "storm": {"rain": 50, "wind": 20, "</s>": 30},
    },
    # sentiment persists: negative words mostly lead to negative words
    "sentiment": {
        "<s>":   {"good": 30, "great": 10, "fine": 20, "bad": 25, "awful": 10, "dull": 5},
        "good":  {"great": 30, "good": 20, "fine": 25, "</s>": 25},
        "great": {"good": 30, "fine": 20, "great": 10, "</s>": 40},
        "fine":  {"good": 10, "fine": 10, "bad": 20, "dull": 25, "</s>": 30},
        "bad":   {"awful": 35, "dull": 25, "bad": 15, "fine": 4, "good": 1, "</s>": 15},
        "awful": {"bad": 35, "dull": 25, "awful": 10, "fine": 5, "good": 1, "</s>": 24},
        "dull":  {"bad": 30, "dull": 15, "awful": 15, "fine": 6, "good": 1, "</s>": 25},
    },
}


def sentence(rng, chain, max_len):
    out, prev = [], "<s>"
    while len(out) < max_len:
        nxt = chain[prev]
        tok = rng.choices(list(nxt), weights=list(nxt.values()))[0]
        if tok == "</s>":
            break
        out.append(tok)
        prev = tok
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scenario", choices=sorted(CHAINS), default="keyword")
    ap.add_argument("--sentences", type=int, default=8000)
    ap.add_argument("--max-length", type=int, default=8)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("out")
    args = ap.parse_args()
    rng = random.Random(args.seed)
    chain = CHAINS[args.scenario]
    with open(args.out, "w") as f:
        for _ in range(args.sentences):
            f.write(" ".join(sentence(rng, chain, args.max_length)) + "\n")


if __name__ == "__main__":
    main()
