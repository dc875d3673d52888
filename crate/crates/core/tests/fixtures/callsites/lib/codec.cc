#include "buf.h"

extern "C" int encode(struct buf *out, const char *in)
{
    const char *msg = "buf_append(out) failed\n";
    char quote = '(';
    int rc = buf_append(out, in, 4);
    if (rc) buf_append(out, msg, 1);
    return rc + quote;
}

template <typename T>
int encode_all(struct buf *out, const T &items)
{
    for (const auto &i : items)
        if (buf_append(out, i.data(), i.size()))
            return -1;
    return 0;
}
