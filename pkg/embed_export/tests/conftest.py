import json

import pytest


@pytest.fixture(scope="session")
def tiny_encoder_dir(tmp_path_factory):
    """A small randomly initialized BERT saved locally (no network)."""
    import torch
    from transformers import BertConfig, BertModel, BertTokenizer

    root = tmp_path_factory.mktemp("tiny-bert")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    vocab += list("abcdefghijklmnopqrstuvwxyz0123456789")
    vocab += ["##" + c for c in "abcdefghijklmnopqrstuvwxyz"]
    vocab += ["the", "a", "of", "to", "answer", "question", "classify", "word"]
    (root / "vocab.txt").write_text("\n".join(vocab) + "\n", encoding="utf-8")

    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=128,
    )
    torch.manual_seed(0)
    model = BertModel(config)
    model.save_pretrained(root)
    tokenizer = BertTokenizer(str(root / "vocab.txt"))
    tokenizer.save_pretrained(root)
    return root


@pytest.fixture()
def asset_files(tmp_path):
    instructions = [{"id": i, "text": f"classify the answer {i}"} for i in range(5)]
    exemplars = []
    for e in range(50):
        exemplars.append(
            {
                "id": e,
                "examples": [
                    {"input": f"question {e} {k}", "output": f"answer {k}"} for k in range(2)
                ],
            }
        )
    inst_path = tmp_path / "instructions.json"
    ex_path = tmp_path / "exemplars.json"
    inst_path.write_text(json.dumps(instructions))
    ex_path.write_text(json.dumps(exemplars))
    return inst_path, ex_path
