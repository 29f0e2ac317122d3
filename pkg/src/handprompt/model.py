"""The full network: pose branch, text branch, temperatures and mesh regressor."""
from torch import nn

from .matching import Temperatures, logit_matrix
from .mesh_regressor import MeshRegressor
from .pose_encoder import PoseEncoder, decode_joints_soft
from .prompts import default_vocab
from .text_encoder import TextEncoder


class HandModel(nn.Module):
    def __init__(self, preset, topology, vocab=None, sparse_to_dense=True, projection=True):
        super().__init__()
        vocab = vocab or default_vocab()
        self.preset = preset
        self.pose = PoseEncoder(preset)
        self.text = TextEncoder(len(vocab), preset.embed_dim, dim=preset.text_dim,
                                depth=preset.text_depth, heads=preset.text_heads,
                                head_depth=preset.text_head_depth, pad_id=vocab.pad_id)
        self.temps = Temperatures()
        self.mesh = MeshRegressor(preset, topology, sparse_to_dense=sparse_to_dense,
                                  projection=projection)

    def forward(self, images):
        """Pyramid, lixel logits, soft pose and vertices for a (B, H, W, 3) batch."""
        pyramid, lixels = self.pose(images)
        pose = decode_joints_soft(lixels)
        # the mesh branch consumes the decoded pose as an input, not a target
        verts = self.mesh(pyramid, pose.detach())
        return {"pyramid": pyramid, "lixels": lixels, "pose": pose, "verts": verts}

    def logits(self, lixels, ids_x, ids_y, ids_z):
        pose_emb = self.pose.pool_embeddings(lixels)
        text_emb = self.text(ids_x, ids_y, ids_z)
        return logit_matrix(pose_emb, text_emb, self.temps())
