#!/usr/bin/env python3
"""JSON-lines encoder process for `--joint process:...` and `--text process:...`.

Joint role: CLIP text and image towers. Text role: mean of BERT token states.
Weights load on the first `describe`, so one script serves either role.

    picrel --joint "process:python3 scripts/pretrained_backend.py" \
           --text  "process:python3 scripts/pretrained_backend.py" ...

Model names can be overridden with PICREL_CLIP_MODEL and PICREL_BERT_MODEL.
"""

import json
import os
import sys

import torch
from PIL import Image

CLIP_MODEL = os.environ.get("PICREL_CLIP_MODEL", "openai/clip-vit-base-patch32")
BERT_MODEL = os.environ.get("PICREL_BERT_MODEL", "bert-base-uncased")


class Joint:
    def __init__(self):
        from transformers import CLIPModel, CLIPProcessor

        self.model = CLIPModel.from_pretrained(CLIP_MODEL).eval()
        self.processor = CLIPProcessor.from_pretrained(CLIP_MODEL)
        self.max_tokens = self.processor.tokenizer.model_max_length
        self.images = {}

    def describe(self):
        return {
            "model_id": CLIP_MODEL,
            "dim": self.model.config.projection_dim,
            "max_text_tokens": self.max_tokens,
            "logit_scale": float(self.model.logit_scale.exp()),
        }

    @torch.no_grad()
    def text(self, text):
        enc = self.processor.tokenizer(
            [text], truncation=True, max_length=self.max_tokens, return_tensors="pt"
        )
        return self.model.get_text_features(**enc)[0].tolist()

    @torch.no_grad()
    def image(self, path, box):
        if path not in self.images:
            self.images[path] = Image.open(path).convert("RGB")
        crop = self.images[path].crop(tuple(box))
        enc = self.processor(images=crop, return_tensors="pt")
        return self.model.get_image_features(**enc)[0].tolist()


class Text:
    def __init__(self):
        from transformers import AutoModel, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(BERT_MODEL)
        self.model = AutoModel.from_pretrained(BERT_MODEL).eval()
        self.max_tokens = self.tokenizer.model_max_length

    def describe(self):
        return {
            "model_id": BERT_MODEL,
            "dim": self.model.config.hidden_size,
            "max_text_tokens": self.max_tokens,
            "logit_scale": 1.0,
        }

    @torch.no_grad()
    def tokens(self, text):
        enc = self.tokenizer(
            text, truncation=True, max_length=self.max_tokens, return_tensors="pt"
        )
        return self.model(**enc).last_hidden_state[0]

    def mean(self, text):
        return self.tokens(text).mean(dim=0).tolist()


def handle(req, state):
    op = req.get("op")
    if op == "describe":
        role = req.get("role")
        if role == "joint":
            state["enc"] = Joint()
        elif role == "text":
            state["enc"] = Text()
        else:
            return {"error": f"unknown role {role!r}"}
        return state["enc"].describe()
    enc = state.get("enc")
    if enc is None:
        return {"error": "describe must come first"}
    if op == "joint_text" and isinstance(enc, Joint):
        return {"vector": enc.text(req["text"])}
    if op == "joint_image" and isinstance(enc, Joint):
        return {"vector": enc.image(req["path"], req["box"])}
    if op == "text_tokens" and isinstance(enc, Text):
        return {"vectors": enc.tokens(req["text"]).tolist()}
    if op == "text_mean" and isinstance(enc, Text):
        return {"vector": enc.mean(req["text"])}
    return {"error": f"unsupported op {op!r} for this role"}


def main():
    torch.set_grad_enabled(False)
    state = {}
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            reply = handle(json.loads(line), state)
        except Exception as exc:
            reply = {"error": f"{type(exc).__name__}: {exc}"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
