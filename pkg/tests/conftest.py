from pathlib import Path

import pytest

from blockbpe import MergeTable, SpecialTokenSet, load_merge_table

DATA = Path(__file__).parent / "data"
GPT2_VOCAB = DATA / "gpt2" / "vocab.json"
GPT2_MERGES = DATA / "gpt2" / "merges.txt"
EOT = 50256


def make_toy() -> MergeTable:
    # a:0 b:1 c:2 ab:3 abc:4
    return MergeTable({0: b"a", 1: b"b", 2: b"c", 3: b"ab", 4: b"abc"}, [(0, 0, 1, 3), (1, 3, 2, 4)])


def make_toy8() -> MergeTable:
    """Eight merges over a, b, c, d with overlapping and chained pairs."""
    tokens = {0: b"a", 1: b"b", 2: b"c", 3: b"d"}
    merges = []
    for rank, (left, right) in enumerate(
        [(b"a", b"b"), (b"ab", b"c"), (b"b", b"c"), (b"a", b"a"), (b"ab", b"ab"), (b"c", b"d"), (b"d", b"a"), (b"aa", b"b")]
    ):
        inv = {v: k for k, v in tokens.items()}
        new = len(tokens)
        tokens[new] = left + right
        merges.append((rank, inv[left], inv[right], new))
    return MergeTable(tokens, merges)


@pytest.fixture(scope="session")
def toy():
    return make_toy()


@pytest.fixture(scope="session")
def toy8():
    return make_toy8()


@pytest.fixture(scope="session")
def gpt2():
    return load_merge_table(GPT2_VOCAB, GPT2_MERGES)


@pytest.fixture(scope="session")
def eot():
    return SpecialTokenSet({"<|endoftext|>": EOT})


@pytest.fixture
def corpus_path():
    return DATA / "corpus.txt"


ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0].rstrip("ab")), k)):
        terminalreporter.write_line(ACCEPTANCE[key])
