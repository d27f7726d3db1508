from . import analysis, attacks, cipher, dynamics

__all__ = ['analysis', 'attacks', 'cipher', 'dynamics']
