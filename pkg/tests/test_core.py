import json
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ensembleshap.attacks import KeywordVoteModel, RandomHashModel
from ensembleshap.core import (
    AblationRule,
    ClassificationError,
    FeatureGroup,
    InvalidGroupError,
    PredictionCache,
    Sample,
    SimplifiedModel,
    TokenSequence,
    ablate,
    check_special_value,
    read_dataset,
    sequence_digest,
    simplified_model,
    write_dataset,
)

ABC = TokenSequence(["a", "b", "c"])


class TestAblate:
    @pytest.mark.parametrize(
        "z, expected",
        [
            ({0, 2}, ("a", "[MASK]", "c")),
            ({0, 1, 2}, ("a", "b", "c")),
            ({1}, ("[MASK]", "b", "[MASK]")),
        ],
    )
    def test_examples(self, z, expected):
        assert ablate(ABC, z).tokens == expected

    def test_custom_special_value(self):
        assert ablate(ABC, [1], AblationRule("<unk>")).tokens == ("<unk>", "b", "<unk>")

    @pytest.mark.parametrize("bad", [[3], [-1], [0, 5]])
    def test_out_of_range(self, bad):
        with pytest.raises(InvalidGroupError):
            ablate(ABC, bad)

    def test_empty_group_rejected(self):
        with pytest.raises(InvalidGroupError):
            FeatureGroup([])

    def test_duplicate_indices_rejected(self):
        with pytest.raises(InvalidGroupError):
            FeatureGroup([1, 1])

    @given(st.lists(st.text(min_size=1, max_size=4), min_size=1, max_size=10), st.data())
    def test_survivors_and_length(self, toks, data):
        x = TokenSequence(toks)
        z = data.draw(st.sets(st.integers(0, x.d - 1), min_size=1))
        out = ablate(x, z, AblationRule("\x00M"))
        assert out.d == x.d
        for i in range(x.d):
            assert out[i] == (x[i] if i in z else "\x00M")

    def test_collision_warns(self):
        with pytest.warns(UserWarning):
            assert not check_special_value(TokenSequence(["[MASK]", "a"]), AblationRule())
        assert check_special_value(ABC, AblationRule())


class TestTokenSequence:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            TokenSequence([])

    def test_digest_stable_and_unambiguous(self):
        assert sequence_digest(("ab", "c")) != sequence_digest(("a", "bc"))
        assert ABC.digest() == TokenSequence("a b c".split()).digest()

    def test_delete(self):
        assert ABC.delete([0, 2]).tokens == ("b",)


class TestSimplifiedModel:
    def test_trigger_rule(self):
        h = KeywordVoteModel({"trigger": (0.0, 1.0)}, 2)
        x = TokenSequence(["a", "trigger", "c"])
        assert simplified_model(h, x, AblationRule(), {1}) == 2
        assert simplified_model(h, x, AblationRule(), {0}) == 1

    def test_repeat_calls_identical(self):
        hz = SimplifiedModel(RandomHashModel(3, 4), ABC)
        assert [hz((0, 2)) for _ in range(5)] == [hz((0, 2))] * 5

    def test_out_of_range_label(self):
        class Bad:
            num_labels = 2

            def classify(self, tokens):
                return 7

        with pytest.raises(ClassificationError):
            SimplifiedModel(Bad(), ABC)((0,))

    def test_model_exception_wrapped(self):
        class Boom:
            num_labels = 2

            def classify(self, tokens):
                raise RuntimeError("boom")

        with pytest.raises(ClassificationError):
            SimplifiedModel(Boom(), ABC)((0,))


class TestPredictionCache:
    def test_transparent(self):
        h = RandomHashModel(1, 3)
        cache = PredictionCache()
        plain = SimplifiedModel(h, ABC)
        cached = SimplifiedModel(h, ABC, cache=cache)
        groups = [(0,), (1, 2), (0, 1, 2), (0,)]
        assert [plain(g) for g in groups] == [cached(g) for g in groups]
        assert cache.hits == 1 and cache.misses == 3 and len(cache) == 3

    def test_roundtrip(self, tmp_path):
        cache = PredictionCache()
        SimplifiedModel(RandomHashModel(1, 3), ABC, cache=cache)((0, 2))
        cache.save(tmp_path / "c.jsonl")
        loaded = PredictionCache.load(tmp_path / "c.jsonl")
        assert loaded.get(ABC.digest(), (0, 2)) == cache.get(ABC.digest(), (0, 2))

    def test_bad_header(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text(json.dumps({"format": "other"}) + "\n")
        with pytest.raises(ValueError):
            PredictionCache.load(p)

    def test_concurrent_inserts(self):
        cache = PredictionCache()

        def fill(offset):
            for j in range(200):
                cache.put("x", (offset, j), 1)

        threads = [threading.Thread(target=fill, args=(t,)) for t in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(cache) == 800


class TestDataset:
    def test_roundtrip(self, tmp_path):
        samples = [Sample("a", TokenSequence(["x", "y"]), 1), Sample("b", TokenSequence(["z"]))]
        write_dataset(tmp_path / "d.jsonl", samples)
        assert read_dataset(tmp_path / "d.jsonl") == samples

    def test_text_field(self, tmp_path):
        (tmp_path / "d.jsonl").write_text('{"id": "t", "text": "hello  world"}\n')
        assert read_dataset(tmp_path / "d.jsonl")[0].tokens.tokens == ("hello", "world")

    def test_missing_tokens(self, tmp_path):
        (tmp_path / "d.jsonl").write_text('{"id": "t"}\n')
        with pytest.raises(ValueError):
            read_dataset(tmp_path / "d.jsonl")
