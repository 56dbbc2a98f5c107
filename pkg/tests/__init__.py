# Tests for capsym
