"""Fixed-point field encoding, check-only gadgets, and detection transcripts."""
from .field import (BN254_SCALAR, DEFAULT_MODULUS, DEFAULT_SCALE_BITS, MERSENNE_61,
                    FieldElement, FixedPoint, dequantize, quantize, quantize_vector)
from .gadgets import division_check, freivalds_check, freivalds_cost, isqrt_check
from .transcript import (FixedCache, PublicInputs, Verdict, VerificationTranscript, ZkParams,
                         commit, load_transcript, prove_detection, public_inputs_from,
                         save_transcript, verify_chain, verify_detection)
