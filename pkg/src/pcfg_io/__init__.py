"""Inside-outside computation for binary PCFGs, the attention models that
reproduce it, and the restricted / low-rank approximations of both."""

from .chart import IOChart, inside, io, marginals, outside, posteriors, run_io, sentence_logprob
from .grammar import Grammar, GrammarError, load_grammar, make_grammar, random_grammar, save_grammar, validate
from .kernels import BACKEND
from .mlm import one_mask_distribution, one_mask_perplexity
from .parse_eval import EvalPolicy, evaluate, labelled_recall
from .sampler import sample_corpus, sample_tree
from .trees import ParseTree, format_tree, parse_tree

__version__ = "0.1.0"
