"""Privacy-preserving use of a secret key shared with a central server.

A user device and a share server each hold half of a key x = x_U + x_S.
The server blind-signs one-time key-share tokens containing a randomized
encryption of its share; spending a token over an anonymous channel gives
both sides fresh shares for one run of a threshold protocol, without the
server learning who is using the key.  Keys can be blocked and their use
rate-limited per epoch even against an attacker holding the device state.
"""

__version__ = "0.1.0"
