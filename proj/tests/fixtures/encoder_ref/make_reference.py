"""Regenerates the tiny BertForMaskedLM reference used by test_encoder.

Writes config.json, vocab.txt, model.safetensors and expected.json (token ids,
final hidden states and MLM logits) next to this script.
"""
import json
import pathlib

import torch
from transformers import BertConfig, BertForMaskedLM, BertTokenizer

HERE = pathlib.Path(__file__).resolve().parent

WORDS = ["the", "attitude", "to", "is", "from", "perspective", "of", "and", "donald", "trump",
         "favor", "against", "none", "agree", "happy", "##ily", "cafe", "un", "##able", "vote",
         "policy", "abortion", "a", "b", "c", "d", "e", "f", "##s", "##ed"]
SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
PUNCT = [".", ",", "!", "?", "'", "#", "@", "中", "国"]

SENTENCES = [
    "The attitude to Donald Trump is [MASK].",
    "From the perspective of policy, and abortion!",
    "Café   UNABLE happily votes?",
    "#agree @trump 中国 xyzzy",
    "favor against none",
]


def main():
    vocab = SPECIALS + PUNCT + WORDS
    (HERE / "vocab.txt").write_text("\n".join(vocab) + "\n")
    tok = BertTokenizer(str(HERE / "vocab.txt"), do_lower_case=True)

    torch.manual_seed(1234)
    config = BertConfig(vocab_size=len(vocab), hidden_size=16, num_hidden_layers=2, num_attention_heads=2,
                        intermediate_size=32, max_position_embeddings=32, type_vocab_size=2,
                        hidden_act="gelu", layer_norm_eps=1e-12)
    model = BertForMaskedLM(config).eval()
    # Non-trivial LayerNorm and bias values so that their handling is exercised.
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "LayerNorm" in name or name.endswith("bias"):
                p.add_(0.1 * torch.randn_like(p))
    model.save_pretrained(HERE, safe_serialization=True)
    (HERE / "config.json").write_text(json.dumps(config.to_dict(), indent=2))

    cases = []
    for s in SENTENCES:
        ids = tok(s)["input_ids"]
        with torch.no_grad():
            out = model(input_ids=torch.tensor([ids]), output_hidden_states=True)
        cases.append({
            "text": s,
            "tokens": tok.convert_ids_to_tokens(ids),
            "ids": ids,
            "hidden": out.hidden_states[-1][0].tolist(),
            "logits": out.logits[0].tolist(),
        })
    (HERE / "expected.json").write_text(json.dumps({"cases": cases}))


if __name__ == "__main__":
    main()
