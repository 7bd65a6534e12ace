"""Synthetic datasets shared by the unit and acceptance tests."""

import numpy as np

from tfpack.dataset import Dataset, Sample


def clustered(seed=0, n=500, clusters=10, dim=16, center_scale=4.0, noise=1.0, lengths=(100, 600)):
    """Gaussian clusters with random token lengths."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, (clusters, dim))
    labels = rng.integers(0, clusters, n)
    X = centers[labels] + rng.normal(0.0, noise, (n, dim))
    L = rng.integers(lengths[0], lengths[1], n)
    samples = [Sample(f"c{i}", f"item {i}", token_length=int(L[i])) for i in range(n)]
    return Dataset(samples, X)


def hub(seed=0, satellites=50, dim=16, radius=1.0):
    """One centroid at the origin plus satellites on a sphere around it.

    Satellites are in random directions, so two of them are about
    radius * sqrt(2) apart while each is exactly ``radius`` from the centroid:
    the centroid is every satellite's nearest neighbour.
    """
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(satellites, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    X = np.vstack([np.zeros((1, dim)), radius * dirs])
    samples = [Sample("hub", "centroid", token_length=10)]
    samples += [Sample(f"sat{i}", f"satellite {i}", token_length=10) for i in range(satellites)]
    return Dataset(samples, X)


def grouped(rng, n_major, n_minor, dim=4, lengths=(1, 50)):
    """Random points with a binary ``group`` attribute, groups interleaved at random."""
    n = n_major + n_minor
    groups = np.array(["maj"] * n_major + ["min"] * n_minor)
    rng.shuffle(groups)
    X = rng.normal(size=(n, dim))
    L = rng.integers(lengths[0], lengths[1], n)
    samples = [
        Sample(f"g{i}", f"text {i}", token_length=int(L[i]), group=str(groups[i]), label=int(i % 2))
        for i in range(n)
    ]
    return Dataset(samples, X)


def random_dataset(rng, n, dim=3, lengths=(1, 200)):
    X = rng.normal(size=(n, dim))
    L = rng.integers(lengths[0], lengths[1], n)
    return Dataset([Sample(f"r{i}", f"t {i}", token_length=int(L[i])) for i in range(n)], X)
