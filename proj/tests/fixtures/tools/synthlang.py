# SPDX-License-Identifier: Apache-2.0
"""Toy English-like language with agreement, used to train the desk-scale model.

Each word is one token. The generator knows the part of speech of every token it
emits, so POS annotations and grammatical/ungrammatical minimal pairs come for free.
"""

import random

BOS = "<bos>"

DET_SG = ["a", "this", "that", "every", "each"]
DET_PL = ["these", "those", "some", "many", "all"]
DET_ANY = ["the"]

# (singular, plural, gender) gender in {"m", "f", "n"}
ANIMATE = [
    ("man", "men", "m"), ("boy", "boys", "m"), ("king", "kings", "m"),
    ("father", "fathers", "m"), ("brother", "brothers", "m"), ("uncle", "uncles", "m"),
    ("actor", "actors", "m"), ("waiter", "waiters", "m"),
    ("woman", "women", "f"), ("girl", "girls", "f"), ("queen", "queens", "f"),
    ("mother", "mothers", "f"), ("sister", "sisters", "f"), ("aunt", "aunts", "f"),
    ("actress", "actresses", "f"), ("waitress", "waitresses", "f"),
    ("teacher", "teachers", "n"), ("student", "students", "n"), ("doctor", "doctors", "n"),
    ("farmer", "farmers", "n"), ("author", "authors", "n"), ("pilot", "pilots", "n"),
    ("lawyer", "lawyers", "n"), ("baker", "bakers", "n"), ("dog", "dogs", "n"),
    ("cat", "cats", "n"),
]
INANIMATE = [
    ("book", "books"), ("car", "cars"), ("house", "houses"), ("tree", "trees"),
    ("river", "rivers"), ("city", "cities"), ("letter", "letters"), ("song", "songs"),
    ("picture", "pictures"), ("table", "tables"), ("garden", "gardens"), ("bridge", "bridges"),
    ("window", "windows"), ("key", "keys"), ("cabinet", "cabinets"), ("road", "roads"),
    ("box", "boxes"), ("door", "doors"), ("island", "islands"), ("tower", "towers"),
]
# (3sg, base, participle)
TRANSITIVE = [
    ("sees", "see", "seen"), ("likes", "like", "liked"), ("knows", "know", "known"),
    ("finds", "find", "found"), ("helps", "help", "helped"), ("visits", "visit", "visited"),
    ("watches", "watch", "watched"), ("admires", "admire", "admired"),
    ("remembers", "remember", "remembered"), ("follows", "follow", "followed"),
    ("paints", "paint", "painted"), ("describes", "describe", "described"),
]
INTRANSITIVE = [
    ("sleeps", "sleep"), ("runs", "run"), ("laughs", "laugh"), ("smiles", "smile"),
    ("waits", "wait"), ("arrives", "arrive"), ("sings", "sing"), ("works", "work"),
]
ADJ = ["old", "young", "happy", "tall", "small", "red", "quiet", "clever", "brave",
       "tired", "famous", "strange", "green", "busy", "calm", "proud"]
ADP = ["near", "behind", "with", "from", "under", "beside", "for", "of", "in", "on"]
ADV = ["often", "quickly", "always", "rarely", "today", "slowly"]
REFL = {"m": "himself", "f": "herself", "pl": "themselves"}


def vocabulary():
    words = [BOS, ".", ",", "and", "but", "who", "that", "not", "no", "ever", "never",
             "is", "are", "was", "were", "has", "have", "does", "do",
             "himself", "herself", "themselves"]
    words += DET_SG + DET_PL + DET_ANY
    for s, p, _ in ANIMATE:
        words += [s, p]
    for s, p in INANIMATE:
        words += [s, p]
    for a, b, c in TRANSITIVE:
        words += [a, b, c]
    for a, b in INTRANSITIVE:
        words += [a, b]
    words += ADJ + ADP + ADV
    seen, out = set(), []
    for w in words:
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


class Generator:
    """Emits (word, pos) lists. Number is 'sg' or 'pl'."""

    def __init__(self, seed):
        self.r = random.Random(seed)

    def det(self, num):
        r = self.r
        if r.random() < 0.4:
            return ("the", "DET")
        return (r.choice(DET_SG if num == "sg" else DET_PL), "DET")

    def noun(self, num, animate):
        r = self.r
        if animate:
            s, p, g = r.choice(ANIMATE)
        else:
            s, p = r.choice(INANIMATE)
            g = "n"
        return ((s if num == "sg" else p), "NOUN"), g

    def np(self, num, animate, depth=0, allow_mod=True):
        r = self.r
        out = [self.det(num)]
        while r.random() < 0.3:
            out.append((r.choice(ADJ), "ADJ"))
        n, g = self.noun(num, animate)
        out.append(n)
        if allow_mod and depth < 2:
            x = r.random()
            if x < 0.2:
                out += self.pp(depth + 1)
            elif x < 0.3 and animate:
                out += [("who", "PRON")] + self.vp(num, g, depth + 1)
        return out, g

    def pp(self, depth):
        r = self.r
        num = r.choice(["sg", "pl"])
        obj, _ = self.np(num, r.random() < 0.5, depth)
        return [(r.choice(ADP), "ADP")] + obj

    def vp(self, num, gender, depth=0):
        r = self.r
        sg = num == "sg"
        x = r.random()
        if x < 0.35:
            v = r.choice(TRANSITIVE)
            obj, _ = self.np(r.choice(["sg", "pl"]), r.random() < 0.5, depth + 1)
            return [(v[0] if sg else v[1], "VERB")] + obj
        if x < 0.5:
            v = r.choice(INTRANSITIVE)
            out = [(v[0] if sg else v[1], "VERB")]
            if r.random() < 0.4:
                out.append((r.choice(ADV), "ADV"))
            return out
        if x < 0.62:
            aux = r.choice([("is", "are"), ("was", "were")])
            out = [(aux[0] if sg else aux[1], "AUX")]
            if r.random() < 0.3:
                out.append(("not", "PART"))
            return out + [(r.choice(ADJ), "ADJ")]
        if x < 0.74:
            v = r.choice(TRANSITIVE)
            obj, _ = self.np(r.choice(["sg", "pl"]), r.random() < 0.5, depth + 1)
            out = [("has" if sg else "have", "AUX")]
            if r.random() < 0.2:
                out.append(("never", "ADV"))
            return out + [(v[2], "VERB")] + obj
        if x < 0.84:
            v = r.choice(TRANSITIVE)
            obj, _ = self.np(r.choice(["sg", "pl"]), r.random() < 0.5, depth + 1)
            return [("does" if sg else "do", "AUX"), ("not", "PART"), (v[1], "VERB")] + obj
        if gender == "n" and sg:
            v = r.choice(TRANSITIVE)
            obj, _ = self.np(r.choice(["sg", "pl"]), True, depth + 1)
            return [(v[0], "VERB")] + obj
        v = r.choice(TRANSITIVE)
        refl = REFL["pl"] if not sg else REFL[gender]
        return [(v[0] if sg else v[1], "VERB"), (refl, "PRON")]

    def npi_clause(self):
        r = self.r
        num = r.choice(["sg", "pl"])
        subj, _ = self.np(num, True, allow_mod=False)
        subj[0] = ("no", "DET")
        v = r.choice(TRANSITIVE)
        obj, _ = self.np(r.choice(["sg", "pl"]), r.random() < 0.5, 1)
        return subj + [("has" if num == "sg" else "have", "AUX"), ("ever", "ADV"), (v[2], "VERB")] + obj

    def clause(self):
        r = self.r
        if r.random() < 0.08:
            return self.npi_clause()
        num = r.choice(["sg", "pl"])
        subj, g = self.np(num, True)
        return subj + self.vp(num, g)

    def sentence(self):
        r = self.r
        out = self.clause()
        if r.random() < 0.15:
            out += [(",", "PUNCT"), (r.choice(["and", "but"]), "CCONJ")] + self.clause()
        return out + [(".", "PUNCT")]

    def document(self, n_sentences):
        out = []
        for _ in range(n_sentences):
            out += self.sentence()
        return out


class PairMaker:
    """Grammatical/ungrammatical minimal pairs, one phenomenon per category."""

    def __init__(self, seed):
        self.r = random.Random(seed)
        self.g = Generator(seed + 1)

    def _words(self, seq):
        return [w for w, _ in seq]

    def determiner_noun(self):
        r, g = self.r, self.g
        num = r.choice(["sg", "pl"])
        det = r.choice(DET_SG if num == "sg" else DET_PL)
        bad_det = r.choice(DET_PL if num == "sg" else DET_SG)
        n, gender = g.noun(num, True)
        rest = g.vp(num, gender, 1)
        good = [det, n[0]] + self._words(rest) + ["."]
        bad = [bad_det, n[0]] + self._words(rest) + ["."]
        return "determiner_noun_agreement", "det_noun_number", good, bad

    def subject_verb(self):
        r, g = self.r, self.g
        num = r.choice(["sg", "pl"])
        subj = [g.det(num)[0]]
        n, _ = g.noun(num, r.random() < 0.5)
        subj.append(n[0])
        attractor_num = "pl" if num == "sg" else "sg"
        if r.random() < 0.7:
            obj, _ = g.np(attractor_num, r.random() < 0.5, 2)
            subj += [r.choice(ADP)] + self._words(obj)
            phen = "across_prepositional_phrase"
        else:
            phen = "simple"
        aux = r.choice([("is", "are"), ("was", "were")])
        verb_good = aux[0] if num == "sg" else aux[1]
        verb_bad = aux[1] if num == "sg" else aux[0]
        tail = [r.choice(ADJ), "."]
        return "subject_verb_agreement", phen, subj + [verb_good] + tail, subj + [verb_bad] + tail

    def anaphor(self):
        r, g = self.r, self.g
        while True:
            s, p, gender = r.choice(ANIMATE)
            if gender != "n":
                break
        num = r.choice(["sg", "pl"])
        det = g.det(num)[0]
        v = r.choice(TRANSITIVE)
        if num == "sg":
            good_refl = REFL[gender]
            bad_refl = r.choice([REFL["pl"], REFL["m" if gender == "f" else "f"]])
            words = [det, s, v[0]]
            phen = "anaphor_gender" if bad_refl != REFL["pl"] else "anaphor_number"
        else:
            good_refl = REFL["pl"]
            bad_refl = REFL[r.choice(["m", "f"])]
            words = [det, p, v[1]]
            phen = "anaphor_number"
        return "anaphor_agreement", phen, words + [good_refl, "."], words + [bad_refl, "."]

    def npi(self):
        r, g = self.r, self.g
        num = r.choice(["sg", "pl"])
        n, _ = g.noun(num, True)
        v = r.choice(TRANSITIVE)
        obj, _ = g.np(r.choice(["sg", "pl"]), r.random() < 0.5, 2)
        aux = "has" if num == "sg" else "have"
        tail = [aux, "ever", v[2]] + self._words(obj) + ["."]
        return "npi_licensing", "matrix_negation", ["no", n[0]] + tail, ["the", n[0]] + tail

    def relative_clause(self):
        r, g = self.r, self.g
        num = r.choice(["sg", "pl"])
        n, _ = g.noun(num, True)
        inner_num = r.choice(["sg", "pl"])
        v = r.choice(TRANSITIVE)
        obj, _ = g.np(inner_num, True, 2, allow_mod=False)
        subj = [g.det(num)[0], n[0], "who", v[0] if num == "sg" else v[1]] + self._words(obj)
        aux = r.choice([("is", "are"), ("was", "were")])
        good_v = aux[0] if num == "sg" else aux[1]
        bad_v = aux[1] if num == "sg" else aux[0]
        tail = [r.choice(ADJ), "."]
        return "subject_verb_agreement", "across_relative_clause", subj + [good_v] + tail, subj + [bad_v] + tail

    def make(self, n_per_kind):
        kinds = [self.determiner_noun, self.subject_verb, self.anaphor, self.npi, self.relative_clause]
        out = []
        for kind in kinds:
            made = 0
            while made < n_per_kind:
                cat, phen, good, bad = kind()
                if good == bad:
                    continue
                out.append((cat, phen, good, bad))
                made += 1
        return out
