"""Experiment configuration: flat [section] key = value files (TOML syntax
subset), defaults, validation, and deterministic resolved-config snapshots.

Sections mirror the runtime configs: [model], [train], [decode], [data],
[task]. Every key is optional; unknown sections or keys are rejected. CLI
flags override file values.
"""

from __future__ import annotations

import copy

from .errors import UsageError

SECTION_ORDER = ("model", "train", "decode", "data", "task")

DEFAULTS = {
    "model": {
        "d_model": 256,
        "ff_dim": 2048,
        "enc_layers": 6,
        "dec_layers": 6,
        "n_heads": 8,
        "n_int": 1,
        "dropout": 0.1,
        "label_smoothing": 0.1,
        "downsample_stride": 1,
        "lambda1": 1.0,
        "lambda2": 5.0,
        "lambda3": 3.0,
        "lid_head": True,
        "xavier": "uniform",
    },
    "train": {
        "lr": 1e-3,
        "batch_size": 16,
        "max_epochs": 30,
        "patience": 5,
        "grad_clip": 5.0,
        "seed": 0,
        "eval_every": 1,
        "warmup_steps": 0,
        "log_every": 1,
    },
    "decode": {
        "beam": 5,
        "ctc_weight": 0.3,
        "max_len": 0,  # 0 -> 2 * frames' + 5, capped
        "alpha": 1.0,
    },
    "data": {
        "dir": "",  # read pre-extracted manifests instead of generating
        "languages": [["bfi", "en"]],
        "lexicon_size": 50,
        "overlap": 0.0,
        "feature_dim": 16,
        "frames_per_sign": [3, 5],
        "noise": 0.05,
        "jitter": 1,
        "sent_len": [3, 8],
        "p_swap": 0.0,
        "allow_adjacent_repeats": False,
        "n_train": 200,
        "n_dev": 40,
        "n_test": 40,
        "seed": 0,
    },
    "task": {
        "mode": "one_to_one",
        "lid_enabled": True,
        "target_lang": "",
        "pair_order": [],  # ablation ordering; empty -> rank by dev BLEU
        "study_seeds": [0, 1, 2],
    },
}


# ---------------------------------------------------------------------------
# TOML-subset reader/writer
# ---------------------------------------------------------------------------


def _parse_scalar(text, where):
    text = text.strip()
    if not text:
        raise UsageError(f"{where}: empty value")
    if text.startswith('"'):
        if not text.endswith('"') or len(text) < 2:
            raise UsageError(f"{where}: unterminated string")
        body = text[1:-1]
        out, i = [], 0
        while i < len(body):
            c = body[i]
            if c == "\\":
                i += 1
                if i >= len(body):
                    raise UsageError(f"{where}: dangling escape")
                out.append({"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(body[i], body[i]))
            else:
                out.append(c)
            i += 1
        return "".join(out)
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        if any(c in text for c in ".eE") and not text.lstrip("+-").isdigit():
            return float(text)
        return int(text)
    except ValueError as e:
        raise UsageError(f"{where}: cannot parse value {text!r}") from e


def _split_items(body, where):
    items, depth, in_str, start = [], 0, False, 0
    for i, c in enumerate(body):
        if in_str:
            if c == '"' and body[i - 1] != "\\":
                in_str = False
            continue
        if c == '"':
            in_str = True
        elif c == "[":
            depth += 1
        elif c == "]":
            depth -= 1
            if depth < 0:
                raise UsageError(f"{where}: unbalanced brackets")
        elif c == "," and depth == 0:
            items.append(body[start:i])
            start = i + 1
    if depth != 0 or in_str:
        raise UsageError(f"{where}: unbalanced brackets or string")
    tail = body[start:]
    if tail.strip():
        items.append(tail)
    return items


def _parse_value(text, where):
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise UsageError(f"{where}: unterminated array")
        return [_parse_value(item, where) for item in _split_items(text[1:-1], where)]
    return _parse_scalar(text, where)


def _strip_comment(line):
    out, in_str = [], False
    for i, c in enumerate(line):
        if c == '"' and (i == 0 or line[i - 1] != "\\"):
            in_str = not in_str
        if c == "#" and not in_str:
            break
        out.append(c)
    return "".join(out)


def parse_config_text(text):
    """Parse [section] / key = value lines into {section: {key: value}}."""
    sections = {}
    current = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        where = f"config line {line_no}"
        if line.startswith("["):
            if not line.endswith("]"):
                raise UsageError(f"{where}: malformed section header")
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise UsageError(f"{where}: expected key = value")
        if current is None:
            raise UsageError(f"{where}: key outside any [section]")
        key, value = line.split("=", 1)
        sections[current][key.strip()] = _parse_value(value, where)
    return sections


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
        return f'"{escaped}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise UsageError(f"cannot serialize config value {v!r}")


def dump_config_text(sections):
    """Deterministic TOML-subset text for a resolved config."""
    lines = []
    for section in SECTION_ORDER:
        if section not in sections:
            continue
        lines.append(f"[{section}]")
        for key in sorted(sections[section]):
            lines.append(f"{key} = {_format_value(sections[section][key])}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Resolution and validation
# ---------------------------------------------------------------------------


def _coerce(default, value, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise UsageError(f"{where}: expected a boolean")
        return value
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, int) and isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(default, str) and isinstance(value, str):
        return value
    if isinstance(default, list) and isinstance(value, (list, tuple)):
        return list(value)
    raise UsageError(f"{where}: expected a {type(default).__name__}")


def resolve_config(sections, overrides=None):
    """Merge defaults <- file <- overrides; reject unknown sections/keys."""
    resolved = copy.deepcopy(DEFAULTS)
    for source in (sections or {}, overrides or {}):
        for section, kv in source.items():
            if section not in resolved:
                raise UsageError(f"unknown config section [{section}]")
            for key, value in kv.items():
                if key not in resolved[section]:
                    raise UsageError(f"unknown config key {section}.{key}")
                resolved[section][key] = _coerce(
                    DEFAULTS[section][key], value, f"{section}.{key}"
                )
    return resolved


def load_config(path, overrides=None):
    with open(path, encoding="utf-8") as fh:
        return resolve_config(parse_config_text(fh.read()), overrides)


def write_resolved_config(path, resolved):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_config_text(resolved))


def snapshot_path_for(out_path):
    """Resolved-config snapshot location next to a file or directory output."""
    import os

    if os.path.isdir(out_path) or not os.path.splitext(out_path)[1]:
        return os.path.join(out_path, "resolved_config.toml")
    return out_path + ".config.toml"


def synth_config_from(resolved):
    from .data import SynthConfig

    d = resolved["data"]
    return SynthConfig(
        languages=[tuple(p) for p in d["languages"]],
        lexicon_size=d["lexicon_size"],
        overlap=d["overlap"],
        feature_dim=d["feature_dim"],
        frames_per_sign=tuple(d["frames_per_sign"]),
        noise=d["noise"],
        jitter=d["jitter"],
        sent_len=tuple(d["sent_len"]),
        p_swap=d["p_swap"],
        allow_adjacent_repeats=d["allow_adjacent_repeats"],
        n_train=d["n_train"],
        n_dev=d["n_dev"],
        n_test=d["n_test"],
        seed=d["seed"],
    )


def task_spec_from(resolved, mode=None):
    from .data import TaskSpec

    t = resolved["task"]
    return TaskSpec(
        mode=mode or t["mode"],
        lid_enabled=t["lid_enabled"],
        target_lang=t["target_lang"] or None,
    )


def model_config_from(resolved, feature_dim, text_vocab_size, lid_vocab_size):
    from .model import ModelConfig

    m = resolved["model"]
    return ModelConfig(
        feature_dim=feature_dim,
        text_vocab_size=text_vocab_size,
        lid_vocab_size=lid_vocab_size,
        d_model=m["d_model"],
        ff_dim=m["ff_dim"],
        enc_layers=m["enc_layers"],
        dec_layers=m["dec_layers"],
        n_heads=m["n_heads"],
        n_int=m["n_int"],
        dropout=m["dropout"],
        label_smoothing=m["label_smoothing"],
        downsample_stride=m["downsample_stride"],
        lambda1=m["lambda1"],
        lambda2=m["lambda2"],
        lambda3=m["lambda3"],
        lid_head=m["lid_head"],
        xavier=m["xavier"],
    ).validate()


def decode_config_from(resolved):
    from .decoding import DecodeConfig

    d = resolved["decode"]
    return DecodeConfig(
        beam=d["beam"],
        ctc_weight=d["ctc_weight"],
        max_len=d["max_len"] or None,
        alpha=d["alpha"],
    ).validate()


def train_config_from(resolved):
    from .training import TrainConfig

    t = resolved["train"]
    return TrainConfig(
        lr=t["lr"],
        batch_size=t["batch_size"],
        max_epochs=t["max_epochs"],
        patience=t["patience"],
        grad_clip=t["grad_clip"],
        seed=t["seed"],
        eval_every=t["eval_every"],
        warmup_steps=t["warmup_steps"],
        log_every=t["log_every"],
    ).validate()
