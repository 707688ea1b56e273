import pytest

from tqsel.pipeline import make_toy_corpus, synthesize_dataset

ORDER = 2  # low reflection order keeps rendering fast in unit tests


@pytest.fixture(scope="session")
def tiny(tmp_path_factory):
    """Toy corpus plus small manifests for every protocol."""
    root = tmp_path_factory.mktemp("tiny")
    corpus = root / "corpus"
    make_toy_corpus(corpus, {"train": 2, "eval": 1, "test": 1}, duration=2.0, seed=0)
    out = {"root": root, "corpus": corpus}
    for name, protocol, count, split, seed in [
        ("easy_train", "1dir1add", 12, "train", 1),
        ("easy_eval", "1dir1add", 6, "eval", 2),
        ("hard_eval", "2dir", 4, "eval", 3),
        ("moving_train", "moving", 3, "train", 4),
        ("moving_eval", "moving", 2, "eval", 5),
    ]:
        synthesize_dataset(corpus, protocol, count, split, seed, root / name, duration=2.0,
                           max_image_order=ORDER)
        out[name] = root / name / "manifest.jsonl"
    return out


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
