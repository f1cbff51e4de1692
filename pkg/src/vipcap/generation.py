"""Greedy and beam-search decoding.

Decoders are driven through a step function mapping a token prefix to
next-token logits, so the search code is independent of the model behind
it. No length normalization is applied, which makes beam width 1 exactly
equivalent to greedy decoding.
"""

import numpy as np
import torch

from .errors import InputError


def _step_logits(step_fn, ids) -> np.ndarray:
    logits = np.asarray(step_fn(list(ids)), dtype=np.float64)
    if logits.ndim != 1:
        raise InputError(f"step function must return a 1-D logit vector, got {logits.shape}")
    return logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def greedy_decode(step_fn, prompt_ids, eos_id: int, max_len: int) -> list[int]:
    """Argmax continuation of the prompt; stops at EOS or max_len tokens."""
    if max_len < 1:
        raise InputError(f"max_len must be >= 1, got {max_len}")
    ids = list(prompt_ids)
    generated = []
    for _ in range(max_len):
        nxt = int(np.argmax(_step_logits(step_fn, ids)))
        if nxt == eos_id:
            break
        generated.append(nxt)
        ids.append(nxt)
    return generated


def beam_decode(step_fn, prompt_ids, eos_id: int, max_len: int, beam_width: int) -> list[int]:
    """Beam search over summed log-probabilities (no length normalization)."""
    if max_len < 1:
        raise InputError(f"max_len must be >= 1, got {max_len}")
    if beam_width < 1:
        raise InputError(f"beam_width must be >= 1, got {beam_width}")
    prompt = tuple(prompt_ids)
    beams = [(0.0, prompt, False)]  # (log-prob, ids, finished)
    for _ in range(max_len):
        if all(done for _, _, done in beams):
            break
        candidates = []
        for logp, ids, done in beams:
            if done:
                candidates.append((logp, ids, True))
                continue
            log_probs = _log_softmax(_step_logits(step_fn, ids))
            for tok in range(log_probs.shape[0]):
                candidates.append((logp + log_probs[tok], ids + (tok,), tok == eos_id))
        # deterministic: best log-prob first, ties by token sequence
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = candidates[:beam_width]
    best = beams[0]
    generated = list(best[1][len(prompt) :])
    if generated and generated[-1] == eos_id:
        generated.pop()
    return generated


def generate(
    bridge,
    vocab,
    prompt_text: str,
    v_refined,
    strategy: str = "greedy",
    beam_width: int = 1,
    max_len: int = 32,
) -> str:
    """Produce a caption string from a bridged decoder and refined features."""
    if strategy not in ("greedy", "beam"):
        raise InputError(f"unknown decoding strategy {strategy!r}")
    prompt_ids = [vocab.bos_id] + vocab.encode(prompt_text)
    memory = torch.as_tensor(v_refined)

    def step(ids):
        with torch.no_grad():
            logits = bridge(torch.tensor(ids, dtype=torch.int64), memory)
        return logits[-1].double().numpy()

    if strategy == "greedy":
        ids = greedy_decode(step, prompt_ids, vocab.eos_id, max_len)
    else:
        ids = beam_decode(step, prompt_ids, vocab.eos_id, max_len, beam_width)
    return vocab.decode(ids)
