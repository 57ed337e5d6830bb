"""Text normalization: lowercase, tokenize, drop stopwords, stem.

The stopword list is fixed and shipped with the package (the usual
English list of articles, pronouns, auxiliaries, and particles) so runs
are reproducible with no downloads.
"""

from __future__ import annotations

import re

from . import porter

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Standard English stopword list, frozen in-repo.
STOPWORDS = frozenset("""
a about above after again against ain all am an and any are aren as at be
because been before being below between both but by can couldn d did didn
do does doesn doing don down during each few for from further had hadn has
hasn have haven having he her here hers herself him himself his how i if in
into is isn it its itself just ll m ma me mightn more most mustn my myself
needn no nor not now o of off on once only or other our ours ourselves out
over own re s same shan she should shouldn so some such t than that the
their theirs them themselves then there these they this those through to
too under until up ve very was wasn we were weren what when where which
while who whom why will with won wouldn y you your yours yourself yourselves
""".split())


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


def preprocess(text: str) -> list[str]:
    """Full pipeline: tokenize, remove stopwords, then Porter-stem.

    Pure function: identical input always yields identical tokens.
    """
    return [porter.stem(tok) for tok in tokenize(text)
            if tok not in STOPWORDS]
