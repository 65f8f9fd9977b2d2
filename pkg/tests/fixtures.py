"""Hand-written source fixtures shared by the similarity tests."""

# Ten students' answers to one tightly constrained exercise ("sum the even
# values of an array"). The exercise leaves little room for a different
# solution, so the answers share nearly all of their code.
_CORE = """public int sumEvens(int[] nums) {{
    int total = 0;
    for (int i = 0; i < nums.length; i++) {{
        if (nums[i] % 2 == 0) {{
            total += nums[i];
        }}
    }}
    {extra}
    return total;
}}
"""

_EXTRAS = (
    "",
    "// done",
    "if (nums.length == 0) return 0;",
    "total = total * 1;",
    "assert total >= 0;",
    "System.out.println(total);",
    "int unused = nums.length;",
    "total = Math.max(total, 0);",
    "if (total < 0) { total = -total; }",
    "boolean ok = total % 2 == 0;",
)

_NAMES = ("total", "sum", "acc", "s", "result", "t", "evens", "count", "res", "x")

SHORT_SOLUTIONS = {
    f"student{i:02d}": _CORE.format(extra=extra).replace("total", _NAMES[i])
    for i, extra in enumerate(_EXTRAS)
}

# Two unrelated programs.
UNRELATED_A = """public static String reverseWords(String text) {
    String[] parts = text.trim().split(" ");
    StringBuilder out = new StringBuilder();
    for (int i = parts.length - 1; i >= 0; i--) {
        out.append(parts[i]);
        if (i > 0) out.append(' ');
    }
    return out.toString();
}
"""

UNRELATED_B = """double mean(List<Double> xs) {
    if (xs.isEmpty()) throw new IllegalArgumentException("empty");
    double acc = 0.0;
    for (double v : xs) acc += v;
    return acc / xs.size();
}
"""
