"""Planted-cluster corpus generator.

Each cluster owns a disjoint word pool and one tag; documents sample
their words uniformly from their cluster's pool.  Cluster membership is
therefore exactly recoverable from word overlap, which makes the corpus
a correctness oracle: a working model must reach near-perfect
precision@1 on it.
"""

from __future__ import annotations

from numpy.random import PCG64, Generator, SeedSequence

from .corpus import Record

_NOISE_STREAM = 0x746167  # keeps label noise off the text-generation stream


def cluster_tag(cluster: int) -> str:
    return f"tag{cluster}"


def cluster_words(cluster: int, words_per_cluster: int) -> list[str]:
    return [f"c{cluster}w{i}" for i in range(words_per_cluster)]


def _make_doc(rng: Generator, pool: list[str], words_per_doc: int) -> str:
    picks = rng.integers(len(pool), size=words_per_doc)
    return " ".join(pool[int(i)] for i in picks)


def planted_clusters(
    clusters: int = 5,
    words_per_cluster: int = 50,
    train_per_cluster: int = 200,
    test_per_cluster: int = 50,
    words_per_doc: int = 30,
    seed: int = 42,
    tag_noise: float = 0.0,
    untagged_clusters: tuple[int, ...] = (),
) -> tuple[list[Record], list[Record]]:
    """Generate (train, test) record lists.

    tag_noise replaces that fraction of training tags with a uniformly
    random tag, in a separate post-pass so the documents themselves are
    identical to the noise-free corpus.  Clusters listed in
    untagged_clusters contribute training documents with no tags (their
    test documents keep the true tag), modelling topics whose tag does
    not exist yet.  Deterministic in seed.
    """
    rng = Generator(PCG64(seed))
    pools = [cluster_words(g, words_per_cluster) for g in range(clusters)]
    train: list[Record] = []
    test: list[Record] = []
    for g in range(clusters):
        tags = [] if g in untagged_clusters else [cluster_tag(g)]
        for _ in range(train_per_cluster):
            train.append(Record("", _make_doc(rng, pools[g], words_per_doc), tags))
        for _ in range(test_per_cluster):
            test.append(
                Record("", _make_doc(rng, pools[g], words_per_doc), [cluster_tag(g)])
            )
    order = rng.permutation(len(train))
    train = [
        Record(f"train-{i:04d}", train[j].text, train[j].tags)
        for i, j in enumerate(order)
    ]
    test = [Record(f"test-{i:04d}", rec.text, rec.tags) for i, rec in enumerate(test)]
    if tag_noise > 0.0:
        noise = Generator(PCG64(SeedSequence([seed, _NOISE_STREAM])))
        train = [
            Record(
                rec.id,
                rec.text,
                [cluster_tag(int(noise.integers(clusters)))]
                if rec.tags and noise.random() < tag_noise
                else rec.tags,
            )
            for rec in train
        ]
    return train, test
