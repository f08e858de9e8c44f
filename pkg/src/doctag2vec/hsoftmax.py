"""Huffman tree over word frequencies, parameterizing the hierarchical
softmax.

The tree has one leaf per vocabulary word and V-1 internal nodes; each
internal node owns one column of the tree parameter matrix.  A word's
probability is the product of sigmoid branch decisions along its
root-to-leaf path.  Branch signs are +1 for a left child and -1 for a
right child, so the two children of any node split probability mass
exactly (sigma(x) + sigma(-x) = 1) and the leaf probabilities sum to one.

Construction is plain Huffman coding, which minimizes the expected path
length sum(count(w) * |path(w)|).  Merge ties break on the smaller node
id so identical counts always produce identical trees.
"""

from __future__ import annotations

import heapq
from typing import Sequence

import numpy as np
from scipy.special import log_expit

from .errors import EmptyVocabulary


class HuffmanTree:
    """Per-word root-to-leaf paths with branch signs.

    node_ids[w] and signs[w] are parallel arrays: the internal-node column
    indices (root first) and the +/-1 branch directions taken at each of
    them on the way to word w's leaf.
    """

    __slots__ = ("node_ids", "signs", "num_words", "num_internal")

    def __init__(self, node_ids: list[np.ndarray], signs: list[np.ndarray]):
        self.node_ids = node_ids
        self.signs = signs
        self.num_words = len(node_ids)
        self.num_internal = max(self.num_words - 1, 0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, HuffmanTree):
            return NotImplemented
        return self.num_words == other.num_words and all(
            np.array_equal(a, b) and np.array_equal(s, t)
            for a, b, s, t in zip(self.node_ids, other.node_ids, self.signs, other.signs)
        )


def build_huffman(counts: Sequence[int]) -> HuffmanTree:
    """Build the Huffman tree for the given per-word counts.

    Internal node ids are assigned in merge order, so the root always has
    the largest id (V-2).  The lighter of two merged nodes becomes the
    left (+1) child; ties pop the smaller node id first.
    """
    num_words = len(counts)
    if num_words == 0:
        raise EmptyVocabulary("cannot build a tree over zero words")
    if num_words == 1:
        return HuffmanTree(
            [np.empty(0, dtype=np.int32)], [np.empty(0, dtype=np.float32)]
        )

    # Heap node ids: leaves are word ids 0..V-1, merges take V, V+1, ...
    parent = np.full(2 * num_words - 1, -1, dtype=np.int64)
    is_left = np.zeros(2 * num_words - 1, dtype=bool)
    heap: list[tuple[int, int]] = [(int(c), i) for i, c in enumerate(counts)]
    heapq.heapify(heap)
    next_id = num_words
    while len(heap) > 1:
        left_count, left_id = heapq.heappop(heap)
        right_count, right_id = heapq.heappop(heap)
        parent[left_id] = parent[right_id] = next_id
        is_left[left_id] = True
        heapq.heappush(heap, (left_count + right_count, next_id))
        next_id += 1

    node_ids = []
    signs = []
    for word in range(num_words):
        path_nodes = []
        path_signs = []
        node = word
        while parent[node] >= 0:
            path_nodes.append(parent[node] - num_words)
            path_signs.append(1.0 if is_left[node] else -1.0)
            node = parent[node]
        node_ids.append(np.array(path_nodes[::-1], dtype=np.int32))
        signs.append(np.array(path_signs[::-1], dtype=np.float32))
    return HuffmanTree(node_ids, signs)


def path(tree: HuffmanTree, word_id: int) -> list[tuple[int, int]]:
    """Root-first (internal_node_id, sign) pairs for one word."""
    if not 0 <= word_id < tree.num_words:
        raise IndexError(f"word id {word_id} out of range [0, {tree.num_words})")
    return [
        (int(node), int(sign))
        for node, sign in zip(tree.node_ids[word_id], tree.signs[word_id])
    ]


def hs_log_prob(
    tree: HuffmanTree, word_id: int, feature: np.ndarray, node_matrix: np.ndarray
) -> float:
    """log p(word | feature) = sum over path edges of log sigma(sign * <feature, h>).

    Always <= 0; exp-summing over all words gives exactly 1 for any feature
    and parameters because the sign codes form a complete prefix code.
    """
    if not 0 <= word_id < tree.num_words:
        raise IndexError(f"word id {word_id} out of range [0, {tree.num_words})")
    nodes = tree.node_ids[word_id]
    if nodes.size == 0:
        return 0.0
    z = (np.asarray(feature) @ node_matrix[:, nodes]) * tree.signs[word_id]
    return float(log_expit(z.astype(np.float64)).sum())


def weighted_code_length(tree: HuffmanTree, counts: Sequence[int]) -> int:
    """sum(count(w) * |path(w)|), the quantity Huffman coding minimizes."""
    return int(sum(c * len(n) for c, n in zip(counts, tree.node_ids)))
