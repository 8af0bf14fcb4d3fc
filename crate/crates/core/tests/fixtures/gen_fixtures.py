"""Regenerates the frozen reference fixtures used by the Rust test suites.

Requires torch, transformers and safetensors. Run from this directory:

    python3 gen_fixtures.py [/path/to/encoder.json /path/to/vocab.bpe]
    python3 gen_fixtures.py --gpt2 /path/to/gpt2-dir

Without arguments only the model fixtures are rebuilt. With --gpt2 the
final-position logits of 20 fixed prompts are written to
gpt2-dir/reference_logits.json for the GPT-2 acceptance run.

Outputs:
  gpt2-tokenizer/{vocab.json,merges.txt,reference_ids.json}
  tiny-gpt2/{model.safetensors,config.json,reference_logits.json}
"""

import json
import shutil
import sys

import torch
from safetensors.torch import save_file
from transformers import GPT2Config, GPT2LMHeadModel, GPT2Tokenizer

TOKENIZER_STRINGS = [
    "",
    "Hello world",
    "The capital of France is",
    "I'm running, you're jumping; they've gone.",
    "  leading and trailing spaces  ",
    "tabs\tand\nnewlines\n\n",
    "numbers 12345 and 3.14159",
    "unicode: café naïve 東京 🚀",
    "don't won't can't it's we'll I'd",
    "shenanigans refurbishments circumnavigate",
    "a  b   c    d",
    "!!!???...,,,",
]


def tokenizer_fixtures(encoder_json, vocab_bpe):
    shutil.copy(encoder_json, "gpt2-tokenizer/vocab.json")
    shutil.copy(vocab_bpe, "gpt2-tokenizer/merges.txt")
    tok = GPT2Tokenizer("gpt2-tokenizer/vocab.json", "gpt2-tokenizer/merges.txt")
    cases = [{"text": s, "ids": tok.encode(s)} for s in TOKENIZER_STRINGS]
    with open("gpt2-tokenizer/reference_ids.json", "w") as f:
        json.dump(cases, f, indent=1, ensure_ascii=False)


def schedules(n_layer):
    out = {"identity": list(range(n_layer))}
    for l in range(n_layer - 1):
        s = list(range(n_layer))
        s[l], s[l + 1] = s[l + 1], s[l]
        out[f"swap:{l}"] = s
    for l in range(n_layer):
        out[f"drop:{l}"] = [i for i in range(n_layer) if i != l]
    out["repeat:1+2x1"] = [0, 1, 1, 2, 2, 3]
    out["custom:3,0,2"] = [3, 0, 2]
    return out


def model_fixtures():
    torch.manual_seed(1234)
    cfg = GPT2Config(
        vocab_size=96,
        n_positions=64,
        n_embd=32,
        n_layer=4,
        n_head=4,
        n_inner=None,
        activation_function="gelu_new",
        layer_norm_epsilon=1e-5,
        resid_pdrop=0.0,
        embd_pdrop=0.0,
        attn_pdrop=0.0,
    )
    model = GPT2LMHeadModel(cfg).eval()
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "ln" in name and name.endswith("weight"):
                p.copy_(1.0 + 0.3 * torch.randn_like(p))
            elif name.endswith("bias"):
                p.copy_(0.1 * torch.randn_like(p))
            else:
                p.copy_(0.2 * torch.randn_like(p))

    state = {
        k[len("transformer."):]: v.detach().clone().contiguous()
        for k, v in model.state_dict().items()
        if k.startswith("transformer.") and not k.endswith(".attn.bias") and "masked_bias" not in k
    }
    save_file(state, "tiny-gpt2/model.safetensors", metadata={"format": "pt"})
    with open("tiny-gpt2/config.json", "w") as f:
        json.dump(
            {
                "model_type": "gpt2",
                "vocab_size": cfg.vocab_size,
                "n_positions": cfg.n_positions,
                "n_embd": cfg.n_embd,
                "n_layer": cfg.n_layer,
                "n_head": cfg.n_head,
                "n_inner": None,
                "layer_norm_epsilon": cfg.layer_norm_epsilon,
                "activation_function": "gelu_new",
            },
            f,
            indent=2,
        )

    ref = model.double()
    blocks = list(ref.transformer.h)
    gen = torch.Generator().manual_seed(99)
    prompts = []
    for i in range(20):
        length = int(torch.randint(1, 40, (1,), generator=gen))
        prompts.append(torch.randint(0, cfg.vocab_size, (length,), generator=gen).tolist())

    cases = []
    for name, sched in schedules(cfg.n_layer).items():
        ref.transformer.h = torch.nn.ModuleList([blocks[i] for i in sched])
        for pi, ids in enumerate(prompts):
            if name != "identity" and pi >= 3:
                continue
            with torch.no_grad():
                # no KV cache: a repeated block would otherwise append to its
                # own cache slot and attend over stale keys
                logits = ref(torch.tensor([ids]), use_cache=False).logits[0]
            cases.append(
                {
                    "schedule": name,
                    "steps": sched,
                    "tokens": ids,
                    "logits": logits.tolist(),
                }
            )
    ref.transformer.h = torch.nn.ModuleList(blocks)
    with open("tiny-gpt2/reference_logits.json", "w") as f:
        json.dump({"gelu": "tanh", "dtype": "float64", "cases": cases}, f)


GPT2_PROMPTS = [
    "The capital of France is",
    "Once upon a time, there was a",
    "import numpy as np\nimport",
    "The quick brown fox jumps over the lazy",
    "In 1492, Columbus sailed",
    "She opened the door and saw",
    "def fibonacci(n):\n    if n",
    "The mitochondria is the powerhouse of the",
    "To be or not to be, that is the",
    "Water boils at a temperature of",
    "My favourite colour is",
    "The stock market fell sharply on",
    "He was running, jumping and",
    "Paris, London, Berlin, Madrid,",
    "1, 2, 3, 4, 5,",
    "The president of the United States",
    "Photosynthesis converts sunlight into",
    "According to the latest report, the",
    "I can't believe you've",
    "Q: What is two plus two?\nA:",
]


def gpt2_reference(model_dir):
    tok = GPT2Tokenizer(f"{model_dir}/vocab.json", f"{model_dir}/merges.txt")
    model = GPT2LMHeadModel.from_pretrained(model_dir).double().eval()
    cases = []
    for text in GPT2_PROMPTS:
        ids = tok.encode(text)
        with torch.no_grad():
            logits = model(torch.tensor([ids]), use_cache=False).logits[0, -1]
        cases.append({"text": text, "tokens": ids, "final_logits": logits.tolist()})
    with open(f"{model_dir}/reference_logits.json", "w") as f:
        json.dump({"gelu": "tanh", "dtype": "float64", "cases": cases}, f)


if __name__ == "__main__":
    if len(sys.argv) == 3 and sys.argv[1] == "--gpt2":
        gpt2_reference(sys.argv[2])
        sys.exit(0)
    if len(sys.argv) == 3:
        tokenizer_fixtures(sys.argv[1], sys.argv[2])
    model_fixtures()
