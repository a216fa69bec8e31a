"""Seeded synthetic English-like corpus for offline experiments.

Documents are written by a small probabilistic grammar.  Every document has
a topic; open-class slots (nouns, verbs, adjectives) prefer that topic's
words, so documents differ in content the way real text does.  Word choice
within a slot follows a Zipf law, giving realistic frequency skew.
"""

import numpy as np

from .rng import derive_seed

TOPICS = {
    "sports": dict(
        nouns="coach player team match season goal stadium league referee fan trophy striker keeper tournament ball field score injury captain rival pitch final club medal race runner",
        verbs="won lost scored trained defended kicked tackled celebrated coached passed attacked qualified signed",
        adjs="athletic fast tired winning fierce talented injured loyal undefeated competitive",
        advs="bravely",
    ),
    "cooking": dict(
        nouns="chef kitchen recipe soup bread oven garlic onion sauce pepper butter flour dough salad knife pan spice dinner meal dessert cake honey cheese tomato lemon",
        verbs="baked cooked stirred tasted chopped roasted seasoned served boiled mixed sliced grilled fried",
        adjs="delicious spicy sweet fresh crispy savory bitter warm tender salty",
        advs="slowly",
    ),
    "weather": dict(
        nouns="storm rain cloud wind snow forecast thunder lightning sky temperature heat frost fog flood drought breeze sunshine season hurricane tornado climate humidity pressure ice mist",
        verbs="rained poured blew froze melted flooded cleared darkened thundered warmed cooled drifted swept",
        adjs="cloudy stormy humid freezing sunny windy foggy mild severe chilly",
        advs="suddenly",
    ),
    "technology": dict(
        nouns="computer software network server database engineer robot algorithm device phone screen chip code program laptop internet camera sensor battery cloud user update browser app system",
        verbs="installed debugged compiled deployed downloaded processed encrypted launched upgraded crashed rebooted connected designed",
        adjs="digital wireless automatic smart faster secure virtual mobile powerful broken",
        advs="remotely",
    ),
    "music": dict(
        nouns="band song singer guitar piano concert album drummer melody rhythm stage orchestra violin lyric chorus tune audience composer festival record microphone note ballad choir jazz",
        verbs="sang played performed composed recorded strummed rehearsed toured hummed conducted danced listened released",
        adjs="loud melodic acoustic catchy soulful harmonic rhythmic quiet classical electric",
        advs="beautifully",
    ),
    "travel": dict(
        nouns="traveler airport hotel passport ticket luggage train journey map beach island mountain tourist flight guide border harbor village museum cruise road trip suitcase station cabin",
        verbs="traveled flew visited explored booked packed wandered crossed arrived departed hiked sailed toured",
        adjs="exotic remote scenic crowded ancient sandy foreign distant coastal peaceful",
        advs="abroad",
    ),
    "finance": dict(
        nouns="bank market investor stock bond loan budget profit price tax interest fund trader economy dollar account wallet share debt income credit merchant payment salary bubble",
        verbs="invested borrowed traded saved earned spent lent bought sold audited taxed rallied crashed",
        adjs="profitable volatile wealthy cheap expensive risky stable financial bankrupt fiscal",
        advs="wisely",
    ),
    "health": dict(
        nouns="doctor nurse patient hospital medicine clinic vaccine fever illness treatment surgeon therapy diet exercise sleep heart virus symptom pill injury recovery bone muscle blood brain",
        verbs="healed treated diagnosed recovered exercised prescribed vaccinated examined rested operated slept breathed ached",
        adjs="healthy sick chronic painful sterile medical contagious weak strong gentle",
        advs="carefully",
    ),
    "science": dict(
        nouns="scientist experiment laboratory theory molecule atom telescope planet star galaxy microscope cell gene energy particle formula hypothesis sample physics chemist orbit comet fossil crystal data",
        verbs="discovered measured observed tested analyzed calculated proved predicted studied published detected isolated mapped",
        adjs="scientific precise chemical cosmic genetic atomic rigorous empirical molecular invisible",
        advs="precisely",
    ),
    "gardening": dict(
        nouns="gardener garden flower seed soil rose tree leaf root fence shovel weed vegetable orchard hedge tulip compost bloom greenhouse lawn herb bush sprout vine pot",
        verbs="planted watered pruned harvested grew bloomed dug weeded trimmed sowed fertilized blossomed wilted",
        adjs="green leafy fragrant wild blooming lush colorful dry fertile seasonal",
        advs="patiently",
    ),
}

SHARED = dict(
    nouns="people time day year world city family friend child man woman group home story idea problem place week night morning",
    verbs="saw found made took gave wanted liked needed helped started finished changed moved watched",
    adjs="new old good great small large long short important early late happy",
    advs="quickly often rarely again finally really nearly soon",
)

DETERMINERS = "the a this that every some many our their his her one".split()
PRONOUNS = "she he they we it someone everyone".split()
AUX = "will can should might could must".split()
PREPS = "in on with after before during near about for from under over".split()
CONJ = "and but so because while although".split()
BE = "is was seemed became".split()
PHRASES = [
    "at the end of the day", "as a result", "for the first time", "in the middle of the night",
    "on the other hand", "in other words", "as far as anyone knew", "once upon a time",
    "at the same time", "for a long time", "in the end", "more or less",
]


def _zipf(n, s=1.1):
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


class _Grammar:
    def __init__(self, rng, topic_bias=0.8):
        self.rng = rng
        self.topic_bias = topic_bias
        self.topic = None

    def pick(self, words, s=1.1):
        return words[self.rng.choice(len(words), p=_zipf(len(words), s))]

    def function(self, words):
        return self.pick(words, s=1.2)

    def open_class(self, kind):
        src = TOPICS[self.topic] if self.rng.random() < self.topic_bias else SHARED
        return self.pick(src[kind].split())

    def noun_phrase(self, depth=0):
        r = self.rng.random()
        if r < 0.15 and depth == 0:
            return [self.function(PRONOUNS)]
        words = [self.function(DETERMINERS)]
        if self.rng.random() < 0.45:
            words.append(self.open_class("adjs"))
        words.append(self.open_class("nouns"))
        if depth == 0 and self.rng.random() < 0.2:
            words += [self.function(PREPS)] + self.noun_phrase(depth + 1)
        return words

    def verb_phrase(self):
        r = self.rng.random()
        if r < 0.15:
            vp = [self.function(BE), self.open_class("adjs")]
        elif r < 0.35:
            vp = [self.function(AUX), "have", self.open_class("verbs")] + self.noun_phrase(1)
        else:
            vp = [self.open_class("verbs")] + self.noun_phrase(1)
        if self.rng.random() < 0.35:
            vp += [self.function(PREPS)] + self.noun_phrase(1)
        if self.rng.random() < 0.15:
            vp.append(self.open_class("advs") if self.rng.random() < 0.5 else self.pick(SHARED["advs"].split()))
        return vp

    def clause(self):
        return self.noun_phrase() + self.verb_phrase()

    def sentence(self):
        words = []
        if self.rng.random() < 0.2:
            words += self.pick(PHRASES, s=1.0).split() + [","]
        words += self.clause()
        if self.rng.random() < 0.25:
            words += [",", self.function(CONJ)] + self.clause()
        return words + ["."]

    def document(self, n_sentences):
        self.topic = list(TOPICS)[self.rng.integers(len(TOPICS))]
        words = []
        for _ in range(n_sentences):
            words += self.sentence()
        return " ".join(words)


def make_synthetic_corpus(n_docs=2000, seed=0, sentences=(4, 9), topic_bias=0.8):
    """Return ``n_docs`` whitespace-tokenizable documents (one per string)."""
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "corpus")))
    g = _Grammar(rng, topic_bias=topic_bias)
    lo, hi = sentences
    return [g.document(int(rng.integers(lo, hi + 1))) for _ in range(n_docs)]


def write_corpus(path, docs):
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(d.replace("\n", " ") + "\n")


def read_corpus(path):
    """One document per non-empty line."""
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]
