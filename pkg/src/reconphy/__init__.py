"""Link-level simulator of a bandit-driven reconfigurable OFDM physical layer.

Modules:

* :mod:`reconphy.fixedpoint` - Q-format quantisation and arithmetic.
* :mod:`reconphy.bandit` - UCB / UCB-V / UCB-Tuned channel selection.
* :mod:`reconphy.channel` - clipped-Normal fading channel bank with AWGN.
* :mod:`reconphy.phy` - QPSK/16-QAM OFDM transmitter and receiver.
* :mod:`reconphy.link` - slot loop, modulation policy, throughput model.
* :mod:`reconphy.harness` - named experiments, config files, CLI.
"""

__version__ = "0.1.0"
