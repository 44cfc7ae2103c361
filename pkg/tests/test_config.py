"""INI config parsing, canonical serialization, and run derivation."""

import numpy as np
import pytest

from natsel.config import (
    DEFAULT_SEEDS,
    DataSettings,
    ExperimentConfig,
    apply_overrides,
    classifier_for,
    datasets_for,
    parse_config,
    recipe_for,
    serialize_config,
    train_for,
)
from natsel.data import gen_synthetic, save_idx
from natsel.errors import ConfigError
from natsel.imageops import GridLayout
from natsel.seeds import derive_seed

FULL_TEXT = """
[experiment]
label = longtail_demo
output_dir = out/runs
seeds = 7,8

[dataset]
kind = synthetic_blobs
classes = 4
height = 6
width = 6
channels = 1
n_max = 50
imbalance_factor = 10.0
noise_std = 0.1
label_noise_rate = 0.2
test_per_class = 5

[model]
hidden = 16,8
conv_kernel = 3
conv_channels = 4

[train]
batch_size = 16
epochs = 6
learning_rate = 0.25
momentum = 0.8
decay = 3:0.1,5:0.5
loss = focal
focal_gamma = 1.5

[grouping]
layout = 1x2
group_size = 2

[weighting]
sigma = 2.5
rho = -1.0
strategy = ns_lf

[sampler]
kind = cbs
"""


class TestDefaults:
    def test_empty_text_yields_defaults(self):
        cfg = parse_config("")
        assert cfg.label == "experiment"
        assert cfg.output_dir == "runs"
        assert cfg.seeds == DEFAULT_SEEDS == (2024, 2025, 2026)
        assert cfg.data.kind == "synthetic_blobs"
        assert cfg.data.classes == 10
        assert (cfg.data.height, cfg.data.width, cfg.data.channels) == (8, 8, 1)
        assert cfg.data.noise_std == 0.05
        assert cfg.data.train_counts() == (100,) * 10
        assert cfg.hidden == (32,)
        assert cfg.conv_kernel == 0

    def test_default_training_plan(self):
        t = parse_config("").train
        assert t.batch_size == 32
        assert t.epochs == 8
        assert t.learning_rate == 0.5
        assert t.momentum == 0.9
        assert t.decay_milestones == ()
        assert t.layout == GridLayout(2, 2)
        assert (t.weighting.sigma, t.weighting.rho) == (1.0, 0.0)
        assert t.weighting.strategy == "uniform"
        assert t.sampler.kind == "instance_uniform"
        assert t.sampler.total_epochs == t.epochs
        assert t.loss.kind == "cross_entropy"

    def test_full_text(self):
        cfg = parse_config(FULL_TEXT)
        assert cfg.label == "longtail_demo"
        assert cfg.seeds == (7, 8)
        assert cfg.data.n_max == 50
        assert cfg.data.imbalance_factor == 10.0
        assert cfg.data.train_counts() == (50, 23, 11, 5)
        assert cfg.hidden == (16, 8)
        assert cfg.train.decay_milestones == ((3, 0.1), (5, 0.5))
        assert cfg.train.loss.kind == "focal"
        assert cfg.train.loss.focal_gamma == 1.5
        assert cfg.train.layout == GridLayout(1, 2)
        assert cfg.train.weighting.strategy == "ns_lf"
        assert cfg.train.sampler.kind == "cbs"
        assert cfg.train.sampler.total_epochs == 6


class TestStrictness:
    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config("[trainning]\nbatch_size = 8\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key train.lr"):
            parse_config("[train]\nlr = 0.5\n")

    def test_bad_integer(self):
        with pytest.raises(ConfigError, match="train.batch_size"):
            parse_config("[train]\nbatch_size = many\n")

    def test_bad_float(self):
        with pytest.raises(ConfigError, match="weighting.sigma"):
            parse_config("[weighting]\nsigma = big\n")

    def test_bad_decay(self):
        with pytest.raises(ConfigError, match="train.decay"):
            parse_config("[train]\ndecay = sometimes\n")

    def test_bad_layout_is_labeled(self):
        with pytest.raises(ConfigError, match="grouping.layout"):
            parse_config("[grouping]\nlayout = 2by2\n")

    def test_group_size_must_match_layout(self):
        text = "[grouping]\nlayout = 2x4\ngroup_size = 4\n"
        with pytest.raises(ConfigError, match="group_size"):
            parse_config(text)
        consistent = "[grouping]\nlayout = 2x4\ngroup_size = 8\n"
        assert parse_config(consistent).train.layout == GridLayout(2, 4)

    def test_unknown_loss(self):
        with pytest.raises(ConfigError, match="train.loss"):
            parse_config("[train]\nloss = hinge\n")

    def test_unknown_strategy(self):
        with pytest.raises(ConfigError, match="weighting.strategy"):
            parse_config("[weighting]\nstrategy = ns_random\n")

    def test_strategy_sign_mismatch(self):
        text = "[weighting]\nsigma = 1.0\nrho = 0.5\nstrategy = ns_lf\n"
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_negative_sigma(self):
        with pytest.raises(ConfigError):
            parse_config("[weighting]\nsigma = -0.1\n")

    def test_syntax_error(self):
        with pytest.raises(ConfigError, match="syntax"):
            parse_config("[experiment\nlabel = x\n")


class TestDataSettings:
    def test_count_modes_are_exclusive(self):
        with pytest.raises(ConfigError, match="choose one"):
            DataSettings(balanced_count=50, n_max=100, imbalance_factor=10.0)
        with pytest.raises(ConfigError, match="choose one"):
            DataSettings(class_counts=(5, 5), balanced_count=50, classes=2)

    def test_longtail_knobs_go_together(self):
        with pytest.raises(ConfigError, match="go together"):
            DataSettings(n_max=100)
        with pytest.raises(ConfigError, match="go together"):
            DataSettings(imbalance_factor=10.0)

    def test_class_counts_length_checked_lazily(self):
        settings = DataSettings(classes=3, class_counts=(5, 5))
        with pytest.raises(ConfigError, match="class_counts"):
            settings.train_counts()
        assert DataSettings(classes=2,
                            class_counts=(5, 4)).train_counts() == (5, 4)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="dataset.kind"):
            DataSettings(kind="imagenet")

    def test_idx_files_need_paths(self):
        with pytest.raises(ConfigError, match="idx_files"):
            DataSettings(kind="idx_files", train_images="a.idx")

    def test_cifar_needs_paths(self):
        with pytest.raises(ConfigError, match="cifar_binary"):
            DataSettings(kind="cifar_binary", train_path="train.bin")

    def test_experiment_validation(self):
        with pytest.raises(ConfigError, match="seeds"):
            ExperimentConfig(seeds=())
        with pytest.raises(ConfigError, match="label"):
            ExperimentConfig(label="")


class TestRoundTrip:
    def test_parse_serialize_parse_is_identity(self):
        cfg = parse_config(FULL_TEXT)
        assert parse_config(serialize_config(cfg)) == cfg

    def test_serialized_text_is_a_fixed_point(self):
        text = serialize_config(parse_config(FULL_TEXT))
        assert serialize_config(parse_config(text)) == text

    def test_defaults_round_trip(self):
        cfg = parse_config("")
        assert parse_config(serialize_config(cfg)) == cfg

    def test_float_values_survive_exactly(self):
        text = "[train]\nlearning_rate = 0.1\n[weighting]\nsigma = 0.30000000000000004\n"
        cfg = parse_config(text)
        again = parse_config(serialize_config(cfg))
        assert again.train.learning_rate == cfg.train.learning_rate
        assert again.train.weighting.sigma == cfg.train.weighting.sigma


class TestOverrides:
    def test_rho_override_relabels_strategy(self):
        base = parse_config("")
        up = apply_overrides(base, rho=1.0)
        assert up.train.weighting.strategy == "ns_ws"
        down = apply_overrides(base, rho=-0.5)
        assert down.train.weighting.strategy == "ns_lf"

    def test_sigma_override_keeps_focal_like(self):
        base = parse_config("[weighting]\nstrategy = focal_like\n")
        assert base.train.weighting.strategy == "focal_like"
        out = apply_overrides(base, sigma=0.5)
        assert out.train.weighting.strategy == "focal_like"
        assert out.train.weighting.sigma == 0.5

    def test_explicit_strategy_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            apply_overrides(parse_config(""), rho=0.5, strategy="ns_lf")

    def test_layout_override(self):
        out = apply_overrides(parse_config(""), layout="4x4")
        assert out.train.layout.group_size == 16
        direct = apply_overrides(parse_config(""), layout=GridLayout(1, 2))
        assert direct.train.layout == GridLayout(1, 2)

    def test_identity_when_nothing_given(self):
        base = parse_config(FULL_TEXT)
        assert apply_overrides(base) == base

    def test_bookkeeping_overrides(self):
        out = apply_overrides(parse_config(""), seeds=[1, 2],
                              label="alt", output_dir="elsewhere")
        assert out.seeds == (1, 2)
        assert out.label == "alt"
        assert out.output_dir == "elsewhere"


class TestRunDerivation:
    def test_recipe_seed_comes_from_run_seed(self):
        cfg = parse_config(FULL_TEXT)
        recipe = recipe_for(cfg, 2024)
        assert recipe.seed == derive_seed(2024, "dataset")
        assert recipe.per_class_counts == (50, 23, 11, 5)
        assert recipe.image_shape == (6, 6, 1)
        assert recipe.label_noise_rate == 0.2
        assert recipe_for(cfg, 2025).seed != recipe.seed

    def test_classifier_config(self):
        cfg = parse_config(FULL_TEXT)
        model_cfg = classifier_for(cfg, 2024)
        assert model_cfg.init_seed == derive_seed(2024, "init")
        assert model_cfg.hidden == (16, 8)
        assert model_cfg.conv is not None
        assert model_cfg.conv.kernel == 3
        plain = classifier_for(parse_config(""), 1)
        assert plain.conv is None

    def test_classifier_shape_overrides(self):
        cfg = parse_config("")
        model_cfg = classifier_for(cfg, 1, image_shape=(4, 4, 3),
                                   class_count=2)
        assert model_cfg.input_shape == (4, 4, 3)
        assert model_cfg.class_count == 2

    def test_train_for_stamps_run_seed(self):
        cfg = parse_config(FULL_TEXT)
        t = train_for(cfg, 99)
        assert t.seed == 99
        assert t.batch_size == cfg.train.batch_size
        assert t.weighting == cfg.train.weighting

    def test_datasets_for_synthetic(self):
        cfg = parse_config("[dataset]\nclasses = 3\nbalanced_count = 6\n"
                           "test_per_class = 2\nheight = 4\nwidth = 4\n")
        train, test = datasets_for(cfg, 2024)
        assert tuple(train.label_counts()) == (6, 6, 6)
        assert tuple(test.label_counts()) == (2, 2, 2)
        again, _ = datasets_for(cfg, 2024)
        assert np.array_equal(train.images, again.images)
        other, _ = datasets_for(cfg, 2025)
        assert not np.array_equal(train.images, other.images)

    def test_datasets_for_idx_files(self, tmp_path):
        ds = gen_synthetic(
            recipe_for(parse_config("[dataset]\nclasses = 2\n"
                                    "balanced_count = 3\nheight = 4\n"
                                    "width = 4\n"), 5))
        paths = {name: str(tmp_path / f"{name}.idx")
                 for name in ("ti", "tl", "vi", "vl")}
        save_idx(paths["ti"], ds.images)
        save_idx(paths["tl"], ds.labels)
        save_idx(paths["vi"], ds.images[:2])
        save_idx(paths["vl"], ds.labels[:2])
        text = ("[dataset]\nkind = idx_files\nclasses = 2\n"
                f"train_images = {paths['ti']}\ntrain_labels = {paths['tl']}\n"
                f"test_images = {paths['vi']}\ntest_labels = {paths['vl']}\n")
        train, test = datasets_for(parse_config(text), 1)
        assert len(train.labels) == 6
        assert len(test.labels) == 2
        assert train.class_count == 2
