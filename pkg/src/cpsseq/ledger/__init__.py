"""Simulated multi-node DAG ledger holding the asset manifest."""
from .attack import AttackReport, attack_sweep, run_attack
from .dag import DagLedger, MissingParent
from .node import (
    ConfirmationView,
    ConsensusConfig,
    LedgerNode,
    confirmation,
    confirmed_set,
    connect,
    current_owner,
    gossip_round,
    make_network,
    quiesce,
    receive,
    select_tips,
    softmax_choice,
    submit,
)
from .transaction import GENESIS, MalformedTransaction, Transaction, TxKind, decode, encode, encode_many

__all__ = [
    "AttackReport", "attack_sweep", "run_attack", "DagLedger", "MissingParent", "ConfirmationView",
    "ConsensusConfig", "LedgerNode", "confirmation", "confirmed_set", "connect", "current_owner",
    "gossip_round", "make_network", "quiesce", "receive", "select_tips", "softmax_choice", "submit",
    "GENESIS", "MalformedTransaction", "Transaction", "TxKind", "decode", "encode", "encode_many",
]
