"""A seconds-scale run configuration for end-to-end tests."""

SMALL = {
    "seed": 0,
    "sequence": {"l_full": 100, "l_short": 20},
    "dictionary": {"n_t1": 10, "n_t2": 10},
    "phantom": {"size": 32, "n_train": 2},
    "acquisition": {"accel": 8, "coils": 2},
    "train": {"iterations": 20, "patch_size": 16, "batch_size": 2, "lr": 1e-3},
    "sample": {"steps": 5, "patch": 16, "stride": 16, "samples": 2},
    "lrtv": {"tv_weight": 1e-3, "max_iters": 5},
}
