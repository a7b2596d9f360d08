"""Small experiment configs shared by the harness and acceptance tests."""

import yaml


def tiny_raw(files, out, classifier="pca_dra"):
    """A pipeline small enough to run in a few seconds."""
    return {
        "seed": 3,
        "output_dir": str(out),
        "data": {**{k: str(v) for k, v in files.items()}, "digits": [0, 1], "train_size": 40, "test_size": 20},
        "classifier": classifier,
        "cqc": {"grids": [[7, 7], [3, 3]], "depth": 2},
        "shots": 256,
        "train_ga": {"population_size": 10, "elite_k": 5, "max_iters": 4, "stagnation_window": 10},
        "attack": {"num_seeds": 2, "ga": {"population_size": 10, "elite_k": 5, "mutation_rate": 0.5,
                                          "mutation_fraction": 0.1, "mutation_sigma": 10.0, "max_iters": 3,
                                          "stagnation_window": 5, "bound": 255.0}},
        "sweep": {"channels": ["depolarizing", "bit_flip"], "grid": [0.0, 0.05, 0.5]},
    }


def write_config(path, raw):
    path.write_text(yaml.safe_dump(raw))
    return path
