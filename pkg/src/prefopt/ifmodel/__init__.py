"""Structure-conditioned autoregressive sequence model at desk scale."""

from prefopt.ifmodel.features import Features, backbone_dihedrals, dihedral, featurize
from prefopt.ifmodel.generation import GenerationResult, Variant, generate_variants, mutable_pool
from prefopt.ifmodel.network import (
    LogLik,
    ModelDims,
    ModelParameters,
    decode_logprobs,
    decoder_forward,
    embed_structure,
    encode,
    init_params,
    score_sequences,
    sequence_loglik,
    span_mask,
    token_loglik,
)
from prefopt.ifmodel.structure import (
    BackboneStructure,
    Residue,
    build_backbone,
    chain_residues,
    load_structure,
    save_structure,
    structure_from_dict,
    structure_to_dict,
)
from prefopt.ifmodel.vocab import VOCAB, TokenizedSequence, Vocabulary

__all__ = [
    "BackboneStructure", "Features", "GenerationResult", "LogLik", "ModelDims", "ModelParameters",
    "Residue", "TokenizedSequence", "VOCAB", "Variant", "Vocabulary", "backbone_dihedrals",
    "build_backbone", "chain_residues", "decode_logprobs", "decoder_forward", "dihedral",
    "embed_structure", "encode", "featurize", "generate_variants", "init_params", "load_structure",
    "mutable_pool", "save_structure", "score_sequences", "sequence_loglik", "span_mask",
    "structure_from_dict", "structure_to_dict", "token_loglik",
]
