int hits; // counter of hits
void f(void)
{
    /* hits = 0; */
    const char *s = "hits";
    hits++; // hits again
    s = "hits = 1";
}
