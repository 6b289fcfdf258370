"""Word-level tokenizer over a closed vocabulary plus control tokens.

Text is lowercased and split on whitespace; unknown words map to ``<unk>``.
Control tokens mark padding, sequence ends, speaker turns and the knowledge
block. The id layout is stable: specials first, then vocabulary words in
the order given at build time.
"""

import json

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
SEP_USR = "<usr>"
SEP_SYS = "<sys>"
SEP_KNOW = "<know>"
UNK = "<unk>"

SPECIALS = [PAD, BOS, EOS, SEP_USR, SEP_SYS, SEP_KNOW, UNK]


class Tokenizer:
    def __init__(self, words):
        self._id_to_token = list(SPECIALS)
        seen = set(SPECIALS)
        for w in words:
            w = w.lower()
            if w not in seen:
                seen.add(w)
                self._id_to_token.append(w)
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}
        self.pad_id = self._token_to_id[PAD]
        self.bos_id = self._token_to_id[BOS]
        self.eos_id = self._token_to_id[EOS]
        self.sep_usr_id = self._token_to_id[SEP_USR]
        self.sep_sys_id = self._token_to_id[SEP_SYS]
        self.sep_know_id = self._token_to_id[SEP_KNOW]
        self.unk_id = self._token_to_id[UNK]

    @property
    def vocab_size(self):
        return len(self._id_to_token)

    @property
    def words(self):
        """Vocabulary words excluding control tokens, in id order."""
        return self._id_to_token[len(SPECIALS):]

    def encode(self, text):
        ids = []
        for w in text.lower().split():
            ids.append(self._token_to_id.get(w, self.unk_id))
        return ids

    def decode(self, ids, skip_special=True):
        toks = []
        for i in ids:
            t = self._id_to_token[i]
            if skip_special and t in SPECIALS:
                continue
            toks.append(t)
        return " ".join(toks)

    def token(self, i):
        return self._id_to_token[i]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"words": self.words}, f)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f)["words"])
