"""Text to phoneme-id conversion: vocabulary, lexicon, letter fallback.

Real text goes through a word lexicon with a deterministic
letter-to-phoneme fallback for out-of-vocabulary words.  Toy corpora
skip all of that: their transcripts already are phoneme strings.
"""

from __future__ import annotations

import importlib.resources
import re
from dataclasses import dataclass, field

PAD, EOS, UNK, MASK = "<pad>", "</s>", "<unk>", "<mask>"
SPECIALS = (PAD, EOS, UNK, MASK)

ARPABET = (
    "AA AE AH AO AW AY B CH D DH EH ER EY F G HH IH IY JH K L M N NG "
    "OW OY P R S SH T TH UH UW V W Y Z ZH"
).split()

# Deterministic letter fallback for OOV words; every ASCII letter has a
# rule so plain words never produce UNK.
LETTER_FALLBACK = {
    "a": ["AE"], "b": ["B"], "c": ["K"], "d": ["D"], "e": ["EH"],
    "f": ["F"], "g": ["G"], "h": ["HH"], "i": ["IH"], "j": ["JH"],
    "k": ["K"], "l": ["L"], "m": ["M"], "n": ["N"], "o": ["AA"],
    "p": ["P"], "q": ["K"], "r": ["R"], "s": ["S"], "t": ["T"],
    "u": ["AH"], "v": ["V"], "w": ["W"], "x": ["K", "S"], "y": ["Y"],
    "z": ["Z"],
}

_TOKEN_RE = re.compile(r"[a-z']+")


class VocabError(ValueError):
    pass


@dataclass
class PhonemeVocab:
    """Dense bijective symbol<->id table; specials occupy the low ids."""

    symbols: list[str]
    sym_to_id: dict = field(init=False)

    def __post_init__(self):
        if list(self.symbols[:4]) != list(SPECIALS):
            raise VocabError("vocabulary must start with the special symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise VocabError("duplicate symbol in vocabulary")
        self.sym_to_id = {s: i for i, s in enumerate(self.symbols)}

    @classmethod
    def arpabet(cls):
        return cls(list(SPECIALS) + ARPABET)

    @classmethod
    def toy(cls, n_phonemes):
        return cls(list(SPECIALS) + [f"P{i:02d}" for i in range(n_phonemes)])

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls([line.strip() for line in f if line.strip()])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for s in self.symbols:
                f.write(s + "\n")

    def __len__(self):
        return len(self.symbols)

    @property
    def pad_id(self):
        return 0

    @property
    def eos_id(self):
        return 1

    @property
    def unk_id(self):
        return 2

    @property
    def mask_id(self):
        return 3

    @property
    def content_ids(self):
        """Ids of the non-special phonemes."""
        return list(range(len(SPECIALS), len(self.symbols)))

    def phonemes_to_ids(self, symbols):
        return [self.sym_to_id.get(s, self.unk_id) for s in symbols]

    def ids_to_phonemes(self, ids):
        out = []
        for i in ids:
            if not 0 <= i < len(self.symbols):
                raise VocabError(f"id {i} out of range for vocab of "
                                 f"{len(self.symbols)}")
            out.append(self.symbols[i])
        return out

    def encode_phoneme_string(self, text, append_eos=True):
        """Whitespace-separated phoneme symbols -> ids (toy corpus path)."""
        ids = self.phonemes_to_ids(text.split())
        if append_eos:
            ids.append(self.eos_id)
        return ids


class Lexicon:
    """word -> phoneme list, with the letter fallback for missing words."""

    def __init__(self, entries, fallback=LETTER_FALLBACK):
        self.entries = entries
        self.fallback = fallback

    @classmethod
    def load(cls, path):
        entries = {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                word, _, phones = line.partition("\t")
                entries[word.lower()] = phones.split()
        return cls(entries)

    @classmethod
    def bundled(cls):
        path = importlib.resources.files("dualspeech.data") / "lexicon.txt"
        return cls.load(path)

    def lookup(self, word):
        word = word.lower()
        if word in self.entries:
            return list(self.entries[word])
        out = []
        for ch in word:
            out.extend(self.fallback.get(ch, [UNK]))
        return out


def text_to_phonemes(text, lexicon, vocab):
    """Lowercase, strip punctuation, convert per word, append EOS."""
    symbols = []
    for token in _TOKEN_RE.findall(text.lower()):
        symbols.extend(lexicon.lookup(token.strip("'")))
    ids = vocab.phonemes_to_ids(symbols)
    ids.append(vocab.eos_id)
    return ids
