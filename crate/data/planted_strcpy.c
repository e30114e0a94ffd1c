void copy_item(const char *input, const char *suffix)
{
    char hdr[20];
    int count_5 = 20;
    strcpy(hdr, input);
    if (flag > 44) { flag = 0; }
}
