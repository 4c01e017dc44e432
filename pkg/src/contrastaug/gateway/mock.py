"""Deterministic in-process mock backends for all four model roles.

Every reply is a pure function of (request, mock seed); no global state, no
wall clock. That makes full pipeline runs reproducible bit-for-bit and lets
tests brute-force every score from first principles.

Mock images are not bitmaps. They are small self-describing JSON records
("stubs"): a magic marker, the concept id, the feature ids rendered into the
image, the generation seed and index, and a salt so bytes are unique. The
mock vision model "recognizes" a stub by decoding it, and the mock embedder
places it in a synthetic geometry:

    image of concept c   ->  normalize(BETA * v_c + (1 - BETA) * noise(image))
    text tagged "tag:c"  ->  normalize(ALPHA * v_c + (1 - ALPHA) * h(text))
    untagged text        ->  h(text)

with v_c a fixed unit vector per concept id and h a hash-derived unit vector
per string. Tagged feature text therefore sits measurably closer to images of
its own concept than to any other, which is what the score filters key on.

Recognition behavior is keyed off the prompt-template markers (see
``templating``): identification probes get a planted confusion pattern (a
deterministic fraction of each concept's images is answered as the
lexicographic successor among the options), evaluation questions are answered
correctly iff the prompt carries a feature tagged with the gold concept and
at chance otherwise, and feature-satisfaction questions answer yes iff the
queried feature id is in the stub. The probe/eval split is intentional: it
lets one corpus exercise both pair discovery (which needs confusions) and
the in-context-versus-baseline comparison (which needs a chance baseline).
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from ..features import feature_id, normalize_feature_text
from ..records import dumps_canonical
from ..seeded import SplitMix64, label_seed, stream
from ..templating import (
    MARK_CONTRAST,
    MARK_EVAL,
    MARK_LOOK,
    MARK_MERGE,
    MARK_PROBE,
    MARK_SATISFACTION,
    MARK_TEXTUAL,
    MARK_VISUAL,
)
from .config import BackendConfig

STUB_MAGIC = "contrastaug-mock-image"

ALPHA = 0.85  # concept weight in tagged-text embeddings
BETA = 0.90  # concept weight in image embeddings

TAG_RE = re.compile(r"tag:([a-z0-9][a-z0-9/_-]*)")
OPTION_RE = re.compile(r"^\s*([A-Z])\.\s+(.+?)\s*$", re.MULTILINE)
QUOTED_RE = re.compile(r'"(.*?)"')
GENERATION_RE = re.compile(r"A photograph of (.+?)\. Distinctive features: (.+)\.\s*$", re.DOTALL)

_ADJECTIVES = [
    "banded", "speckled", "iridescent", "striped", "mottled",
    "crested", "ringed", "glossy", "dusky", "barred",
]
_BODY_PARTS = [
    "crown", "wing bars", "tail tip", "eye ring",
    "flank", "throat patch", "dorsal ridge", "snout",
]
_NOISE_TEXTUAL = "smooth overall outline"
_NOISE_VISUAL = "soft ambient lighting"

TRAITS_PER_CONCEPT = 6
DISTRACTORS_PER_EXTRACTION = 2


def encode_stub(kind: str, concept: str, features: list[str], seed: int, index: int, salt: str) -> bytes:
    record = {
        "magic": STUB_MAGIC,
        "kind": kind,
        "concept": concept,
        "features": sorted(features),
        "seed": seed,
        "index": index,
        "salt": salt,
    }
    return dumps_canonical(record).encode("utf-8")


def decode_stub(data: bytes) -> dict | None:
    try:
        record = json.loads(data)
    except (ValueError, UnicodeDecodeError):
        return None
    if isinstance(record, dict) and record.get("magic") == STUB_MAGIC:
        return record
    return None


def trait_text(concept_id: str, k: int) -> str:
    adj = _ADJECTIVES[label_seed(f"adj:{concept_id}:{k}") % len(_ADJECTIVES)]
    part = _BODY_PARTS[label_seed(f"part:{concept_id}:{k}") % len(_BODY_PARTS)]
    return f"{adj} {part} (tag:{concept_id}/{k})"


def tagged_concept(text: str) -> str | None:
    match = TAG_RE.search(text)
    if match is None:
        return None
    return match.group(1).split("/")[0]


class MockHub:
    """Shared seed and geometry for one family of mock backends."""

    def __init__(
        self,
        seed: int,
        dim: int = 64,
        confusion_rate: float = 0.6,
        feature_dropout: float = 0.0,
        rejection_rate: float = 0.0,
    ):
        self.seed = seed
        self.dim = dim
        self.confusion_rate = confusion_rate
        self.feature_dropout = feature_dropout
        self.rejection_rate = rejection_rate

    # ---- deterministic pseudo-randomness ----

    def fraction(self, *labels: str) -> float:
        """Uniform [0, 1) value keyed by (seed, labels)."""
        payload = "\x1f".join((str(self.seed),) + labels).encode("utf-8")
        digest = hashlib.blake2b(payload, digest_size=8).digest()
        return int.from_bytes(digest, "big") / 2**64

    def _unit(self, *labels: str) -> np.ndarray:
        sm = stream(self.seed, *labels)
        vec = np.array([(sm.next_u64() / 2**63) - 1.0 for _ in range(self.dim)])
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec[0] = 1.0
            norm = 1.0
        return vec / norm

    # ---- geometry ----

    def concept_vector(self, concept_id: str) -> np.ndarray:
        return self._unit("mock-concept-vec", concept_id)

    def text_vector(self, text: str) -> np.ndarray:
        return self._unit("mock-text-vec", text)

    def embed_text(self, text: str) -> np.ndarray:
        concept = tagged_concept(text)
        base = self.text_vector(text)
        if concept is None:
            return base
        vec = ALPHA * self.concept_vector(concept) + (1.0 - ALPHA) * base
        return vec / np.linalg.norm(vec)

    def embed_image(self, data: bytes) -> np.ndarray:
        sha = hashlib.sha256(data).hexdigest()
        noise = self._unit("mock-image-noise", sha)
        stub = decode_stub(data)
        if stub is None:
            return noise
        vec = BETA * self.concept_vector(stub["concept"]) + (1.0 - BETA) * noise
        return vec / np.linalg.norm(vec)

    def is_hard_image(self, data: bytes) -> bool:
        """Planted confusions: a fixed fraction of images per concept."""
        sha = hashlib.sha256(data).hexdigest()
        return self.fraction("hard-image", sha) < self.confusion_rate


class MockBackend:
    """One mock role; hand the same hub to all four for a coherent world."""

    def __init__(self, role: str, hub: MockHub):
        self.role = role
        self.hub = hub

    def invoke(self, request: dict, images: list[bytes]) -> bytes:
        op = request["op"]
        if op == "chat":
            return self._chat(request).encode("utf-8")
        if op == "vision_chat":
            return self._vision(request, images[0]).encode("utf-8")
        if op == "embed_text":
            return self._embedding_payload(self.hub.embed_text(request["text"]))
        if op == "embed_image":
            return self._embedding_payload(self.hub.embed_image(images[0]))
        if op == "generate_image":
            return self._generate(request)
        raise ConfigurationError(f"mock backend cannot serve op {op!r}")

    @staticmethod
    def _embedding_payload(vector: np.ndarray) -> bytes:
        return dumps_canonical({"vector": [float(x) for x in vector]}).encode("utf-8")

    @staticmethod
    def _prompt_of(request: dict) -> str:
        user_lines = [m["content"] for m in request["messages"] if m["role"] == "user"]
        return "\n".join(user_lines)

    # ---- chat ----

    def _chat(self, request: dict) -> str:
        prompt = self._prompt_of(request)
        if MARK_MERGE in prompt:
            return self._merge_reply(prompt)
        if MARK_TEXTUAL in prompt:
            return self._textual_features_reply(prompt)
        nonce = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]
        return f"mock chat reply {nonce}"

    @staticmethod
    def _numbered(lines: list[str]) -> str:
        return "\n".join(f"{i}. {line}" for i, line in enumerate(lines, start=1))

    def _merge_reply(self, prompt: str) -> str:
        seen: dict[str, None] = {}
        for line in prompt.splitlines():
            stripped = line.strip()
            if stripped.startswith("- "):
                seen.setdefault(stripped[2:].strip(), None)
        return self._numbered(list(seen))

    @staticmethod
    def _field(prompt: str, marker: str) -> str | None:
        for line in prompt.splitlines():
            if line.startswith(marker):
                return line[len(marker):].strip()
        return None

    def _textual_features_reply(self, prompt: str) -> str:
        target = self._field(prompt, MARK_TEXTUAL)
        against = self._field(prompt, MARK_CONTRAST)
        lines = [trait_text(target, k) for k in range(TRAITS_PER_CONCEPT)]
        if against:
            # imperfect model: a couple of features actually belong to the contrast class
            lines.extend(trait_text(against, k) for k in range(DISTRACTORS_PER_EXTRACTION))
        lines.append(_NOISE_TEXTUAL)
        return self._numbered(lines)

    # ---- vision ----

    def _vision(self, request: dict, image: bytes) -> str:
        prompt = self._prompt_of(request)
        stub = decode_stub(image)
        if MARK_SATISFACTION in prompt:
            return self._satisfaction_reply(prompt, stub)
        if MARK_VISUAL in prompt:
            return self._visual_features_reply(prompt, stub, image)
        if MARK_EVAL in prompt:
            return self._eval_reply(prompt, stub, image)
        if MARK_PROBE in prompt:
            return self._probe_reply(prompt, stub, image)
        if stub is not None:
            return f"This image shows {stub['concept']}."
        return f"mock vision reply {hashlib.sha256(image).hexdigest()[:12]}"

    def _satisfaction_reply(self, prompt: str, stub: dict | None) -> str:
        if stub is None:
            return "No."
        quoted = QUOTED_RE.search(prompt)
        if quoted is None:
            return "No."
        fid = feature_id(normalize_feature_text(quoted.group(1)))
        return "Yes." if fid in stub.get("features", []) else "No."

    def _visual_features_reply(self, prompt: str, stub: dict | None, image: bytes) -> str:
        if stub is None:
            return "I cannot identify features in this image."
        concept = stub["concept"]
        sha = hashlib.sha256(image).hexdigest()
        order = list(range(TRAITS_PER_CONCEPT))
        stream(self.hub.seed, "mock-visual-pick", sha).shuffle(order)
        lines = [trait_text(concept, k) for k in sorted(order[:4])]
        against = self._field(prompt, MARK_CONTRAST)
        if against:
            lines.append(trait_text(against, label_seed(f"vis-distract:{sha}") % TRAITS_PER_CONCEPT))
        if self.hub.fraction("visual-noise", sha) < 0.5:
            lines.append(_NOISE_VISUAL)
        return self._numbered(lines)

    @staticmethod
    def _options_of(prompt: str) -> list[tuple[str, str]]:
        return [(m.group(1), m.group(2)) for m in OPTION_RE.finditer(prompt)]

    @staticmethod
    def _answer(options: list[tuple[str, str]], name: str) -> str:
        for letter, option_name in options:
            if option_name == name:
                return f"{letter}. {option_name}"
        return f"{options[0][0]}. {options[0][1]}"

    def _probe_reply(self, prompt: str, stub: dict | None, image: bytes) -> str:
        options = self._options_of(prompt)
        if not options:
            return "I cannot tell."
        names = sorted(name for _, name in options)
        if stub is None or stub["concept"] not in names:
            return self._answer(options, names[0])
        gold = stub["concept"]
        if self.hub.is_hard_image(image):
            successor = names[(names.index(gold) + 1) % len(names)]
            return self._answer(options, successor)
        return self._answer(options, gold)

    def _eval_reply(self, prompt: str, stub: dict | None, image: bytes) -> str:
        options = self._options_of(prompt)
        if not options:
            return "I cannot tell."
        gold = stub["concept"] if stub else None
        if MARK_LOOK in prompt and gold is not None:
            tags = {tag.split("/")[0] for tag in TAG_RE.findall(prompt)}
            if gold in tags and any(name == gold for _, name in options):
                return self._answer(options, gold)
        sha = hashlib.sha256(image).hexdigest()
        prompt_sha = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        pick = int(self.hub.fraction("eval-pick", sha, prompt_sha) * len(options))
        letter, name = options[min(pick, len(options) - 1)]
        return f"{letter}. {name}"

    # ---- imagegen ----

    def _generate(self, request: dict) -> bytes:
        match = GENERATION_RE.search(request["prompt"])
        if match is None:
            raise ConfigurationError("mock imagegen got a prompt without the generation shape")
        concept = match.group(1).strip()
        feature_texts = [t.strip() for t in match.group(2).split(";") if t.strip()]
        feature_ids = [feature_id(normalize_feature_text(t)) for t in feature_texts]
        prompt_sha = hashlib.sha256(request["prompt"].encode("utf-8")).hexdigest()
        seed = request["seed"]
        images: list[str] = []
        rejected = 0
        for index in range(request["n"]):
            if self.hub.fraction("reject", prompt_sha, str(seed), str(index)) < self.hub.rejection_rate:
                rejected += 1
                continue
            kept = [
                fid
                for fid in feature_ids
                if self.hub.fraction("dropout", prompt_sha, str(seed), str(index), fid)
                >= self.hub.feature_dropout
            ]
            salt = hashlib.blake2b(
                f"{self.hub.seed}:{prompt_sha}:{seed}:{index}".encode(), digest_size=8
            ).hexdigest()
            stub = encode_stub("synthetic", concept, kept, seed=seed, index=index, salt=salt)
            images.append(base64.b64encode(stub).decode("ascii"))
        return dumps_canonical({"images": images, "rejected": rejected}).encode("utf-8")


def mock_backends(
    seed: int,
    confusion_rate: float = 0.6,
    feature_dropout: float = 0.0,
    rejection_rate: float = 0.0,
    dim: int = 64,
) -> tuple[dict[str, MockBackend], dict[str, BackendConfig]]:
    """Backends plus matching configs for a fully mocked gateway."""
    hub = MockHub(
        seed,
        dim=dim,
        confusion_rate=confusion_rate,
        feature_dropout=feature_dropout,
        rejection_rate=rejection_rate,
    )
    backends = {role: MockBackend(role, hub) for role in ("chat", "vision", "embed", "imagegen")}
    configs = {
        role: BackendConfig(role=role, model_id=f"mock-{role}", max_concurrent=8)
        for role in backends
    }
    return backends, configs


def build_mock_corpus(root: Path, n_concepts: int, images_per_concept: int, seed: int) -> None:
    """Fabricate a corpus of stub images: one directory per concept."""
    root = Path(root)
    for i in range(n_concepts):
        concept_id = f"species-{i:03d}"
        cdir = root / concept_id
        cdir.mkdir(parents=True, exist_ok=True)
        for j in range(images_per_concept):
            salt = hashlib.blake2b(
                f"corpus:{seed}:{concept_id}:{j}".encode(), digest_size=8
            ).hexdigest()
            stub = encode_stub("real", concept_id, [], seed=seed, index=j, salt=salt)
            (cdir / f"img-{j:02d}.img").write_bytes(stub)
