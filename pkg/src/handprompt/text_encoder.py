"""Small trainable text tower: shared trunk followed by one head stack per axis."""
import torch
import torch.nn.functional as F
from torch import nn

from .blocks import TransformerBlock
from .errors import HandPromptError
from .prompts import AXES, max_prompt_length


class TextEncoder(nn.Module):
    def __init__(self, vocab_size, embed_dim, dim=64, depth=2, heads=4, head_depth=1,
                 max_len=None, pad_id=0):
        super().__init__()
        self.pad_id = pad_id
        self.max_len = max_len or max_prompt_length() + 7
        self.tok = nn.Embedding(vocab_size, dim)
        # unit-scale positions: prompts share a bag of words and differ only in order
        self.pos = nn.Parameter(torch.randn(self.max_len, dim))
        # shared trunk stands in for a frozen pretrained text model
        self.trunk = nn.ModuleList(TransformerBlock(dim, heads) for _ in range(depth))
        self.heads = nn.ModuleDict({
            a: nn.ModuleList(TransformerBlock(dim, heads) for _ in range(head_depth)) for a in AXES
        })
        self.norm = nn.LayerNorm(dim)
        self.out = nn.ModuleDict({a: nn.Linear(dim, embed_dim) for a in AXES})

    def encode_axis(self, ids, axis):
        """(B, T) token ids -> (B, E) unnormalized features for one axis."""
        if ids.shape[1] > self.max_len:
            raise HandPromptError("prompt too long", code="prompt_too_long")
        pad = ids == self.pad_id
        x = self.tok(ids) + self.pos[: ids.shape[1]]
        for blk in self.trunk:
            x = blk(x, pad)
        for blk in self.heads[axis]:
            x = blk(x, pad)
        x = self.norm(x)
        keep = (~pad).unsqueeze(-1).to(x.dtype)
        pooled = (x * keep).sum(1) / keep.sum(1).clamp_min(1.0)
        return self.out[axis](pooled)

    def forward(self, ids_x, ids_y, ids_z, normalize=True):
        feats = [self.encode_axis(ids, a) for ids, a in zip((ids_x, ids_y, ids_z), AXES)]
        if normalize:
            feats = [F.normalize(f, dim=-1) for f in feats]
        return tuple(feats)


def encode_text(tokens_x, tokens_y, tokens_z, encoder):
    """Encode one prompt triple (TokenSeq each) into three unit feature vectors."""
    ids = [torch.tensor([t.ids]) for t in (tokens_x, tokens_y, tokens_z)]
    with torch.no_grad():
        fx, fy, fz = encoder(*ids)
    return fx[0], fy[0], fz[0]
