//! Narrative guide chapters compiled as doctests (placeholder until the book lands).
