import pytest

from config import config
from frequnet.errors import ConfigError
from frequnet.harness.phantom import Band
from frequnet.run_config import (RunConfig, Switches, apply_pairs, from_text, load, parse_override, parse_text,
                                 resolve, valid_keys)
from frequnet.spectral import SubbandPolicy


def test_serialize_parse_is_a_fixed_point(tiny_cfg):
    for cfg in (RunConfig(), tiny_cfg, tiny_cfg.with_switches(Switches().all_off()).with_seed(7)):
        text = cfg.serialize()
        parsed = from_text(text)
        assert parsed == cfg
        assert parsed.serialize() == text


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigError) as info:
        from_text('arch.widht = 3\n')
    message = str(info.value)
    assert "'arch.widht'" in message
    for key in ('arch.base_width', 'loss.w_freq', 'optim.patience'):
        assert key in message


def test_short_keys_resolve_by_suffix():
    cfg = apply_pairs(RunConfig(), [('epochs', '3'), ('w_freq', '0.25'), ('lr', '0.01'), ('subband_policy', 'all')])
    assert cfg.train.epochs == 3
    assert cfg.loss.w_freq == 0.25
    assert cfg.optim.lr == 0.01
    assert cfg.optim.lr_min == RunConfig().optim.lr_min
    assert cfg.arch.subband_policy is SubbandPolicy.ALL


def test_ambiguous_short_key():
    with pytest.raises(ConfigError):
        apply_pairs(RunConfig(), [('seed', '1')])


def test_short_class_keys():
    cfg = apply_pairs(RunConfig(), [('class.2.area_fraction', '0.05'), ('1.area_fraction', '0.3')])
    assert cfg.data.classes[1].area_fraction == 0.05
    assert cfg.data.classes[0].area_fraction == 0.3
    with pytest.raises(ConfigError) as info:
        apply_pairs(RunConfig(), [('class.9.area_fraction', '0.05')])
    assert 'data.class.1.area_fraction' in str(info.value)
    with pytest.raises(ConfigError):
        apply_pairs(RunConfig(), [('area_fraction', '0.05')])


def test_comments_blank_lines_and_later_values_win():
    cfg = from_text('# comment\n\narch.depth = 3\narch.depth = 2\nswitches.sld = off\n')
    assert cfg.arch.depth == 2
    assert cfg.switches.sld is False


def test_malformed_lines_and_values():
    with pytest.raises(ConfigError):
        parse_text('arch.depth 4\n')
    with pytest.raises(ConfigError):
        from_text('arch.depth = four\n')
    with pytest.raises(ConfigError):
        from_text('switches.flc = maybe\n')
    with pytest.raises(ConfigError):
        parse_override('epochs')


def test_class_entries_replace_the_list():
    cfg = from_text('data.class.1.area_fraction = 0.3\ndata.class.2.area_fraction = 0.05\n'
                    'data.class.2.band = high\narch.num_classes = 3\n')
    assert [c.area_fraction for c in cfg.data.classes] == [0.3, 0.05]
    assert cfg.data.classes[1].band is Band.HIGH
    with pytest.raises(ConfigError):
        from_text('data.class.2.area_fraction = 0.1\n')
    with pytest.raises(ConfigError):
        from_text('data.class.1.colour = red\n')


def test_validation_errors():
    with pytest.raises(ConfigError):
        from_text('arch.num_classes = 4\n').validate()
    with pytest.raises(ConfigError):
        from_text('data.size = 40\n').validate()
    with pytest.raises(ConfigError):
        from_text('arch.tau = 1.0\n').validate()
    with pytest.raises(ConfigError):
        from_text('arch.groups = 3\n').validate()
    with pytest.raises(ConfigError):
        from_text('arch.wavelet_order = 7\n').validate()
    RunConfig().validate()


def test_precedence_profile_file_override_seed(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('train.epochs = 4\ntrain.batch_size = 1\n')
    cfg = resolve(config['testing'].settings(), str(path), ['epochs=2'], seed=5)
    assert cfg.train.epochs == 2
    assert cfg.train.batch_size == 1
    assert cfg.arch.depth == 2
    assert cfg.train.seed == 5 and cfg.data.seed == 5


def test_load_reads_file(tmp_path, tiny_cfg):
    path = tmp_path / 'saved.cfg'
    path.write_text(tiny_cfg.serialize())
    assert load(str(path)) == tiny_cfg


def test_config_hash():
    a = RunConfig()
    assert len(a.config_hash()) == 12
    assert a.config_hash() == RunConfig().config_hash()
    assert a.with_seed(1).config_hash() != a.config_hash()
    assert a.with_switches(Switches(fal=False)).config_hash() != a.config_hash()


def test_fal_switch_drops_frequency_weight():
    cfg = RunConfig().with_switches(Switches(fal=False))
    assert cfg.effective_loss().w_freq == 0.0
    assert RunConfig().effective_loss().w_freq == 0.5


def test_every_key_is_listed():
    keys = valid_keys()
    assert 'train.seed' in keys and 'data.seed' in keys
    assert 'data.class.2.area_fraction' in keys
    assert len(keys) == len(set(keys))
