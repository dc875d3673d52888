#include <assert.h>
#include "buf.h"

#define CHECK(x) assert(x)
#define APPEND_TWICE(b, s) \
    do { \
        buf_append((b), (s), 1); \
        buf_append((b), (s), 1); \
    } while (0)

static void test_reset(void)
{
    struct buf b = {0};
    APPEND_TWICE(&b, "x");
    CHECK(buf_append(&b, "y", 1) == 0);
    buf_reset(&b);
    CHECK(b.len == 0);
}

int main(void)
{
    test_reset();
    return 0;
}
