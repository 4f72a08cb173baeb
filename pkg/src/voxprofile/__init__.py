"""voxprofile: speaker profiling via prefix-conditioned caption generation.

A frozen speaker encoder turns audio into a 1024-d embedding; a trainable
mapper expands it into 40 prefix vectors of the language model's width; the
causal LM, conditioned on that prefix plus a 10-token text prompt, generates
a speaker description. Training jointly optimizes the captioning likelihood
and a linear speaker classifier on the first prefix vector.
"""

__version__ = "0.1.0"
