void __VERIFIER_error(void);
int __VERIFIER_nondet_int(void);

void ldv_assert(void)
{
    __VERIFIER_error();
}

int ldv_undef_int(void)
{
    return __VERIFIER_nondet_int();
}
